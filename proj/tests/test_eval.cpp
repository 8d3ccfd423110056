/*
 * Copyright 2026 The GeoFlow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "geoflow/eval.hpp"
#include "support.hpp"

namespace geoflow {
namespace {

CallMatcher gold(std::string name, Json args = Json::object()) {
  CallMatcher m;
  m.name = std::move(name);
  m.required_args = std::move(args);
  return m;
}

ToolCall exec(std::string name, Json args = Json::object()) {
  return {"", std::move(name), std::move(args)};
}

/// Longest matching subsequence by enumerating every subsequence of `g`.
std::size_t exhaustive_lcs(const std::vector<CallMatcher>& g, const std::vector<ToolCall>& e) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << g.size()); ++mask) {
    std::size_t j = 0;
    std::size_t len = 0;
    bool ok = true;
    for (std::size_t i = 0; i < g.size() && ok; ++i) {
      if (!(mask & (1u << i))) continue;
      while (j < e.size() && !call_matches(g[i], e[j])) ++j;
      if (j == e.size()) {
        ok = false;
      } else {
        ++j;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

TEST(Trajectory, IdenticalSequencesScoreOne) {
  const std::vector<CallMatcher> g{gold("A"), gold("B"), gold("C")};
  const auto m = match_trajectory(g, {exec("A"), exec("B"), exec("C")});
  EXPECT_DOUBLE_EQ(m.correctness, 1.0);
  EXPECT_EQ(m.alignment.size(), 3u);
}

TEST(Trajectory, InsertedCallLowersTheScore) {
  const std::vector<CallMatcher> g{gold("A"), gold("B"), gold("C")};
  const std::vector<ToolCall> e{exec("A"), exec("X"), exec("B"), exec("C")};
  const auto m = match_trajectory(g, e);
  EXPECT_EQ(m.lcs, 3u);
  EXPECT_EQ(m.lcs, exhaustive_lcs(g, e));
  EXPECT_DOUBLE_EQ(m.correctness, 0.75);
  EXPECT_EQ(m.alignment,
            (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 2}, {2, 3}}));
}

TEST(Trajectory, BothEmptyScoresOne) {
  EXPECT_DOUBLE_EQ(match_trajectory({}, {}).correctness, 1.0);
  EXPECT_DOUBLE_EQ(match_trajectory({gold("A")}, {}).correctness, 0.0);
}

TEST(Trajectory, CoordinatesMatchWithinTolerance) {
  const CallMatcher m = gold("locate", {{"lat", 37.00}});
  EXPECT_TRUE(call_matches(m, exec("locate", {{"lat", 36.95}})));
  EXPECT_FALSE(call_matches(m, exec("locate", {{"lat", 30.0}})));
  EXPECT_DOUBLE_EQ(tolerance_for(m, "lat"), kCoordinateTolerance);
  const CallMatcher b = gold("filter_spatial", {{"bbox", {-122.5, 37.00, -122.0, 37.5}}});
  EXPECT_TRUE(call_matches(b, exec("filter_spatial", {{"bbox", {-122.5, 36.95, -122.0, 37.5}}})));
  EXPECT_FALSE(call_matches(b, exec("filter_spatial", {{"bbox", {-122.5, 37.0, -122.0}}})));
}

TEST(Trajectory, NonCoordinateNumbersMatchExactlyByDefault) {
  CallMatcher m = gold("final_answer", {{"value", 10.0}});
  EXPECT_TRUE(call_matches(m, exec("final_answer", {{"value", 10}})));
  EXPECT_FALSE(call_matches(m, exec("final_answer", {{"value", 10.01}})));
  m.arg_tolerances["value"] = 0.1;
  EXPECT_TRUE(call_matches(m, exec("final_answer", {{"value", 10.5}})));
}

TEST(Trajectory, StringsCompareTrimmedAndCaseFolded) {
  const CallMatcher m = gold("load_product", {{"product", "xview1"}});
  EXPECT_TRUE(call_matches(m, exec("load_product", {{"product", " XView1 "}})));
  EXPECT_FALSE(call_matches(m, exec("load_product", {{"product", "sentinel2"}})));
  EXPECT_FALSE(call_matches(m, exec("load_product", Json::object())));
  EXPECT_FALSE(call_matches(m, exec("load_products", {{"product", "xview1"}})));
  // Extra arguments are ignored.
  EXPECT_TRUE(call_matches(m, exec("load_product", {{"product", "xview1"}, {"note", 1}})));
}

TEST(Trajectory, AgreesWithExhaustiveOracleAndProperties) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> names{"A", "B", "C", "D"};
  auto pick = [&](std::size_t n) {
    return names[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)];
  };
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<CallMatcher> g;
    std::vector<ToolCall> e;
    const auto gl = std::uniform_int_distribution<std::size_t>(0, 6)(rng);
    const auto el = std::uniform_int_distribution<std::size_t>(0, 7)(rng);
    for (std::size_t i = 0; i < gl; ++i) g.push_back(gold(pick(4)));
    for (std::size_t i = 0; i < el; ++i) e.push_back(exec(pick(4)));
    const auto m = match_trajectory(g, e);
    ASSERT_EQ(m.lcs, exhaustive_lcs(g, e));
    EXPECT_GE(m.correctness, 0.0);
    EXPECT_LE(m.correctness, 1.0);

    auto spurious = e;
    spurious.push_back(exec("Z"));
    EXPECT_LE(match_trajectory(g, spurious).correctness, m.correctness);
    if (!g.empty()) {
      auto extended = e;
      extended.push_back(exec(g.back().name));
      EXPECT_GE(match_trajectory(g, extended).lcs, m.lcs);
    }
  }
}

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

TEST(EoError, RelativeAndAbsolute) {
  EXPECT_DOUBLE_EQ(eo_error(42.0, 42.0).value, 0.0);
  EXPECT_NEAR(eo_error(110.0, 100.0).value, 0.10, 1e-12);
  EXPECT_FALSE(eo_error(110.0, 100.0).absolute);
  const EoError z = eo_error(0.3, 0.0);
  EXPECT_DOUBLE_EQ(z.value, 0.3);
  EXPECT_TRUE(z.absolute);
}

TEST(EoError, MissingAnswerThrows) {
  EXPECT_THROW(eo_error(std::optional<AnswerRecord>{}, 1.0), MissingPrediction);
  EXPECT_THROW(eo_error(AnswerRecord{"no number", std::nullopt}, 1.0), MissingPrediction);
  EXPECT_DOUBLE_EQ(eo_error(AnswerRecord{"50", 50.0}, 100.0).value, 0.5);
}

TaskSpec numeric_task(double value) {
  TaskSpec t;
  t.task_id = "t";
  t.gold_trajectory = {gold("final_answer")};
  t.gold_answer.kind = AnswerKind::numeric;
  t.gold_answer.value = value;
  return t;
}

RunRecord answered(double value, RunStatus status = RunStatus::completed) {
  RunRecord r;
  r.task_id = "t";
  r.status = status;
  r.final_answer = AnswerRecord{"The answer is " + std::to_string(value), value};
  return r;
}

TEST(Success, NumericAnswerWithinTolerance) {
  EXPECT_TRUE(success_check(numeric_task(100), answered(100)));
  EXPECT_TRUE(success_check(numeric_task(100), answered(109)));
  EXPECT_FALSE(success_check(numeric_task(100), answered(120)));
}

TEST(Success, IncompleteRunNeverSucceeds) {
  EXPECT_FALSE(success_check(numeric_task(100), answered(100, RunStatus::max_turns_exhausted)));
  EXPECT_FALSE(success_check(numeric_task(100), answered(100, RunStatus::aborted)));
}

TEST(Success, IntermediateErrorsDoNotMatter) {
  RunRecord r = answered(100);
  for (int i = 0; i < 2; ++i) {
    ExecutedCall c;
    c.call = exec("load_product");
    c.result = {"", ToolStatus::error, std::string(kInjectedFaultPayload)};
    c.injected_fault = true;
    r.trajectory.push_back(c);
  }
  EXPECT_TRUE(success_check(numeric_task(100), r));
}

TEST(Success, DetectionAnswerNeedsEveryGoldIdRendered) {
  const World w = generate_catalog(3, 40, 2);
  std::vector<Detection> dets;
  TaskSpec t;
  t.gold_trajectory = {gold("render_map")};
  t.gold_answer.kind = AnswerKind::detections;
  for (std::size_t i = 0; i < w.images().size() && dets.size() < 3; ++i) {
    const auto& img = w.images()[i];
    for (std::size_t k = 0; k < img.objects.size() && dets.size() < 3; ++k) {
      dets.push_back({object_id(img.image_id, k), i, img.objects[k].category, img.objects[k].bbox});
      t.gold_answer.detections.push_back(
          {object_id(img.image_id, k), img.image_id, img.objects[k].category, img.objects[k].bbox});
    }
  }
  ASSERT_EQ(dets.size(), 3u);
  RunRecord r;
  r.status = RunStatus::completed;
  r.artifacts = {"map.geojson"};
  r.artifact_contents["map.geojson"] = render_geojson(w, dets);
  EXPECT_TRUE(success_check(t, r));
  dets.pop_back();
  r.artifact_contents["map.geojson"] = render_geojson(w, dets);
  EXPECT_FALSE(success_check(t, r));
  r.artifact_contents["map.geojson"] = "not json";
  EXPECT_FALSE(success_check(t, r));
}

// ---------------------------------------------------------------------------
// Detection metrics
// ---------------------------------------------------------------------------

GoldDetection det(std::string id, NormBox box, std::string cat = "ship") {
  return {std::move(id), "img", std::move(cat), box};
}

TEST(Detection, IdentityScoresOne) {
  const std::vector<GoldDetection> g{det("a", {0.1, 0.1, 0.2, 0.2}), det("b", {0.5, 0.5, 0.7, 0.7})};
  const auto s = detection_metrics(g, g);
  EXPECT_DOUBLE_EQ(s.precision, 1.0);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
  EXPECT_DOUBLE_EQ(s.f1, 1.0);
}

TEST(Detection, EmptyPredictionScoresZero) {
  const std::vector<GoldDetection> g{det("a", {0.1, 0.1, 0.2, 0.2}), det("b", {0.3, 0.3, 0.4, 0.4}),
                                     det("c", {0.5, 0.5, 0.6, 0.6})};
  const auto s = detection_metrics({}, g);
  EXPECT_DOUBLE_EQ(s.precision, 0.0);
  EXPECT_DOUBLE_EQ(s.recall, 0.0);
  EXPECT_DOUBLE_EQ(s.f1, 0.0);
  EXPECT_FALSE(s.both_empty);
  const auto both = detection_metrics({}, {});
  EXPECT_TRUE(both.both_empty);
  EXPECT_DOUBLE_EQ(both.f1, 1.0);
}

TEST(Detection, OneHitOneMissOneSpurious) {
  const std::vector<GoldDetection> g{det("a", {0.1, 0.1, 0.3, 0.3}), det("b", {0.6, 0.6, 0.8, 0.8})};
  const std::vector<GoldDetection> p{det("p1", {0.11, 0.1, 0.31, 0.3}),
                                     det("p2", {0.4, 0.0, 0.45, 0.05})};
  const auto s = detection_metrics(p, g);
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.f1, 0.5);
}

TEST(Detection, CategoryMustAgree) {
  const std::vector<GoldDetection> g{det("a", {0.1, 0.1, 0.3, 0.3})};
  const std::vector<GoldDetection> p{det("p", {0.1, 0.1, 0.3, 0.3}, "vehicle")};
  EXPECT_DOUBLE_EQ(detection_metrics(p, g).recall, 0.0);
}

TEST(Detection, IouOfHalfOverlap) {
  // Two unit-height boxes overlapping on half their width: 0.5 / 1.5.
  EXPECT_NEAR(iou({0.0, 0.0, 0.2, 0.1}, {0.1, 0.0, 0.3, 0.1}), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(iou({0.0, 0.0, 0.1, 0.1}, {0.5, 0.5, 0.6, 0.6}), 0.0);
}

// ---------------------------------------------------------------------------
// Cost
// ---------------------------------------------------------------------------

const char* kPricing = R"(# rates per million tokens
[models."gpt-4o"]
input = 2.50
cached = 1.25
output = 10.00

[local]
hourly_rate = 10.0
capacity = 8
)";

TEST(Cost, ApiTokensAtListRates) {
  const PricingTable p = parse_pricing(kPricing);
  EXPECT_DOUBLE_EQ(compute_cost(TokenTotals{}, 0.0, p, CostBasis::api, "gpt-4o"), 0.0);
  TokenTotals t;
  t.input_tokens = 1000;
  t.output_tokens = 500;
  EXPECT_NEAR(compute_cost(t, 0.0, p, CostBasis::api, "gpt-4o"), 0.0075, 0.0075 * 1e-12);
  t.cached_tokens = 1000;
  EXPECT_NEAR(compute_cost(t, 0.0, p, CostBasis::api, "gpt-4o"), 0.00875, 1e-15);
}

TEST(Cost, LocalIsAmortizedWallTime) {
  const PricingTable p = parse_pricing(kPricing);
  EXPECT_NEAR(compute_cost(TokenTotals{}, 36.0, p, CostBasis::local, "anything"), 0.0125,
              0.0125 * 1e-12);
}

TEST(Cost, UnknownModelIsAnError) {
  const PricingTable p = parse_pricing(kPricing);
  EXPECT_THROW(compute_cost(TokenTotals{}, 0.0, p, CostBasis::api, "gpt-5"), UnknownModelPricing);
  EXPECT_THROW(compute_cost(TokenTotals{}, 1.0, parse_pricing("[models.\"m\"]\ninput = 1\n"),
                            CostBasis::local, "m"),
               PricingError);
}

TEST(Cost, MalformedPricingIsRejected) {
  EXPECT_THROW(parse_pricing("[models.\"m\"]\ninput = -1\n"), PricingError);
  EXPECT_THROW(parse_pricing("[models.\"m\"]\ninput = cheap\n"), PricingError);
  EXPECT_THROW(parse_pricing("[local]\nhourly_rate = 1\ncapacity = 0\n"), PricingError);
  EXPECT_THROW(parse_pricing("input = 1\n"), PricingError);
}

TEST(Cost, BundledPricingParses) {
  const PricingTable p = load_pricing(geoflow::testing::data_file("config/pricing.toml"));
  EXPECT_DOUBLE_EQ(p.models.at("gpt-4o-mini").cached, 0.075);
  ASSERT_TRUE(p.local);
  EXPECT_EQ(p.local->capacity, 8);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct Fixture {
  std::vector<TaskSpec> tasks;
  std::vector<RunRecord> runs;
};

Fixture two_tasks() {
  Fixture f;
  TaskSpec a = numeric_task(100);
  a.task_id = "a";
  a.intent_gold = "Forest";
  a.gold_trajectory = {gold("query_series"), gold("final_answer")};
  TaskSpec b = numeric_task(10);
  b.task_id = "b";
  b.intent_gold = "Urban";
  b.gold_trajectory = {gold("query_series"), gold("final_answer")};
  f.tasks = {a, b};

  auto ok = [](std::string name) {
    ExecutedCall c;
    c.call = exec(std::move(name));
    return c;
  };
  RunRecord ra = answered(100);
  ra.task_id = "a";
  ra.trajectory = {ok("query_series"), ok("final_answer")};
  ra.cost = 0.25;
  RunRecord rb = answered(12, RunStatus::max_turns_exhausted);
  rb.task_id = "b";
  rb.trajectory = {ok("query_series")};
  rb.cost = 0.5;
  f.runs = {ra, rb};
  return f;
}

TEST(Report, MeansOverTasks) {
  const Fixture f = two_tasks();
  const MetricsReport r = aggregate_report(f.runs, f.tasks);
  EXPECT_EQ(r.tasks, 2u);
  EXPECT_DOUBLE_EQ(r.success_rate, 50.0);
  EXPECT_DOUBLE_EQ(r.correctness_rate, 75.0);
  EXPECT_DOUBLE_EQ(r.total_cost, 0.75);
  ASSERT_TRUE(r.per_domain_eps.at("forest"));
  EXPECT_DOUBLE_EQ(*r.per_domain_eps.at("forest"), 0.0);
  ASSERT_TRUE(r.per_domain_eps.at("urban"));
  EXPECT_NEAR(*r.per_domain_eps.at("urban"), 20.0, 1e-9);
}

TEST(Report, JsonRoundTripIsExact) {
  const Fixture f = two_tasks();
  const MetricsReport r = aggregate_report(f.runs, f.tasks);
  EXPECT_EQ(report_from_json(Json::parse(to_json(r).dump())), r);
  const std::string table = render_report_table(r);
  EXPECT_NE(table.find("50.0"), std::string::npos);
}

TEST(Report, RunWithoutTaskIsAnError) {
  Fixture f = two_tasks();
  f.runs[1].task_id = "zzz";
  EXPECT_THROW(aggregate_report(f.runs, f.tasks), Error);
}

TEST(Report, DomainOfIntent) {
  EXPECT_EQ(domain_of(std::string("Agriculture")), "agro");
  EXPECT_EQ(domain_of(std::string("Climate")), "climate");
  EXPECT_EQ(domain_of(std::string("Vision")), std::nullopt);
  EXPECT_EQ(domain_of(std::nullopt), std::nullopt);
}

// ---------------------------------------------------------------------------
// Gating simulation
// ---------------------------------------------------------------------------

TEST(Gating, PerfectPolicyAlwaysSucceeds) {
  EXPECT_DOUBLE_EQ(gating_success_analytic(0.0, {16, 3, 1, 7}), 1.0);
  EXPECT_DOUBLE_EQ(gating_success_empirical(0.0, {16, 3, 1, 7}, 100, 1), 1.0);
}

TEST(Gating, ClosedFormValues) {
  const double full = std::pow(0.7 + 0.3 / 16.0, 5);
  const double gated = std::pow(0.7 + 0.3 / 4.0, 5);
  EXPECT_NEAR(gating_success_analytic(0.3, {16, 16, 16, 16, 16}), full, 1e-12);
  EXPECT_NEAR(gating_success_analytic(0.3, {4, 4, 4, 4, 4}), gated, 1e-12);
  EXPECT_NEAR(full, 0.1919, 1e-4);
  EXPECT_NEAR(gated, 0.2795, 1e-4);
}

TEST(Gating, SimulationTracksTheClosedForm) {
  const GatingSimulation s = simulate_gating_policy(0.3, 16, {4, 4, 4, 4, 4}, 10000, 42);
  EXPECT_NEAR(s.full.empirical, s.full.analytic, 0.02);
  EXPECT_NEAR(s.gated.empirical, s.gated.analytic, 0.02);
  EXPECT_GT(s.gated.empirical, s.full.empirical);
  const GatingSimulation again = simulate_gating_policy(0.3, 16, {4, 4, 4, 4, 4}, 10000, 42);
  EXPECT_DOUBLE_EQ(again.full.empirical, s.full.empirical);
}

}  // namespace
}  // namespace geoflow
