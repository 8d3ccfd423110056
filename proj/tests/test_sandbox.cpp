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
#include <set>

#include "geoflow/sandbox.hpp"
#include "support.hpp"

namespace geoflow {
namespace {

using geoflow::testing::TempDir;

const World& world() {
  static const World w = generate_catalog(7, 400, 8);
  return w;
}

Json ok_payload(const ToolOutcome& o) {
  EXPECT_TRUE(o.result.ok()) << o.result.payload;
  return Json::parse(o.result.payload);
}

ToolCall call(std::string name, Json args) { return {"c", std::move(name), std::move(args)}; }

TEST(Catalog, DeterministicInSeed) {
  const World a = generate_catalog(7, 10, 2);
  const World b = generate_catalog(7, 10, 2);
  EXPECT_EQ(catalog_jsonl(a), catalog_jsonl(b));
  EXPECT_EQ(series_csv(a), series_csv(b));
  EXPECT_EQ(regions_json(a), regions_json(b));
  const World c = generate_catalog(8, 10, 2);
  EXPECT_NE(catalog_jsonl(a), catalog_jsonl(c));
}

TEST(Catalog, EveryRowSatisfiesInvariants) {
  const World& w = world();
  std::set<std::string> ids;
  for (const auto& img : w.images()) {
    EXPECT_TRUE(ids.insert(img.image_id).second);
    EXPECT_GE(img.lat, -90.0);
    EXPECT_LE(img.lat, 90.0);
    EXPECT_GE(img.lon, -180.0);
    EXPECT_LE(img.lon, 180.0);
    EXPECT_GE(img.date, epoch_start());
    EXPECT_LT(img.date, epoch_start() + kEpochDays);
    EXPECT_NE(std::find(kProducts.begin(), kProducts.end(), img.product), kProducts.end());
    for (const auto& o : img.objects) {
      EXPECT_NE(std::find(kCategories.begin(), kCategories.end(), o.category), kCategories.end());
      EXPECT_GE(o.bbox[0], 0.0);
      EXPECT_GE(o.bbox[1], 0.0);
      EXPECT_LT(o.bbox[0], o.bbox[2]);
      EXPECT_LT(o.bbox[1], o.bbox[3]);
      EXPECT_LE(o.bbox[2], 1.0);
      EXPECT_LE(o.bbox[3], 1.0);
    }
  }
  // One row per (region, variable, day), no gaps.
  EXPECT_EQ(w.series().size(), w.regions().size() * kVariables.size() * kEpochDays);
  std::set<std::tuple<std::string, std::string, DayNumber>> keys;
  for (const auto& row : w.series()) {
    EXPECT_TRUE(keys.insert({row.region, row.variable, row.date}).second);
    EXPECT_TRUE(std::isfinite(row.value));
    if (row.variable == "ndvi") {
      EXPECT_GE(row.value, -1.0);
      EXPECT_LE(row.value, 1.0);
    } else if (row.variable != "lst") {
      EXPECT_GE(row.value, 0.0) << row.variable;
    }
  }
  for (std::size_t i = 0; i < w.regions().size(); ++i) {
    const auto& a = w.regions()[i].box;
    EXPECT_LT(a.west, a.east);
    EXPECT_LT(a.south, a.north);
    for (std::size_t k = i + 1; k < w.regions().size(); ++k) {
      const auto& b = w.regions()[k].box;
      const bool disjoint = a.east < b.west || b.east < a.west || a.north < b.south || b.north < a.south;
      EXPECT_TRUE(disjoint);
    }
  }
}

TEST(Catalog, FilesRoundTrip) {
  TempDir dir("catalog");
  const World a = generate_catalog(3, 50, 3);
  write_catalog(a, dir.str());
  const World b = load_catalog(dir.str());
  EXPECT_EQ(a.images(), b.images());
  EXPECT_EQ(a.series(), b.series());
  EXPECT_EQ(a.regions(), b.regions());
}

TEST(Tools, FilterTemporalMatchesBruteForce) {
  Session s(world(), {});
  const Json h1 = ok_payload(s.execute(call("load_product", {{"product", "xview1"}})));
  const Json h2 = ok_payload(s.execute(call(
      "filter_temporal", {{"handle", h1["handle"]}, {"start_date", "2020-05-01"}, {"end_date", "2020-05-31"}})));
  std::size_t expected = 0;
  for (const auto& img : world().images()) {
    expected += img.product == "xview1" && img.date >= days_from_civil(2020, 5, 1) &&
                img.date <= days_from_civil(2020, 5, 31);
  }
  EXPECT_GT(expected, 0u);
  EXPECT_EQ(h2["count"].get<std::size_t>(), expected);
  EXPECT_EQ(s.handle("h2")->images.size(), expected);
  EXPECT_EQ(s.handle("h2")->parent, "h1");
}

TEST(Tools, ZeroNoiseDetectionIsIdentity) {
  Session s(world(), {});
  ok_payload(s.execute(call("load_product", {{"product", "sentinel2"}})));
  ok_payload(s.execute(call("run_detection", {{"handle", "h1"}, {"drop_rate", 0}, {"jitter", 0}})));
  ok_payload(s.execute(call("filter_category", {{"handle", "h2"}, {"category", "ship"}})));
  std::vector<std::pair<std::string, NormBox>> expected;
  for (const auto& img : world().images()) {
    if (img.product != "sentinel2") continue;
    for (std::size_t k = 0; k < img.objects.size(); ++k) {
      if (img.objects[k].category == "ship") expected.push_back({object_id(img.image_id, k), img.objects[k].bbox});
    }
  }
  const Handle* h = s.handle("h3");
  ASSERT_NE(h, nullptr);
  ASSERT_EQ(h->detections.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(h->detections[i].detection_id, expected[i].first);
    EXPECT_EQ(h->detections[i].bbox, expected[i].second);
  }
}

TEST(Tools, NoiseDropsAndJittersDeterministically) {
  Session a(world(), {}), b(world(), {});
  for (Session* s : {&a, &b}) {
    ok_payload(s->execute(call("load_product", {{"product", "xview1"}})));
    ok_payload(s->execute(call("run_detection", {{"handle", "h1"}, {"drop_rate", 0.5}, {"jitter", 0.05}})));
    ok_payload(s->execute(call("run_detection", {{"handle", "h1"}})));
  }
  EXPECT_EQ(a.handle("h2")->detections, b.handle("h2")->detections);
  EXPECT_LT(a.handle("h2")->detections.size(), a.handle("h3")->detections.size());
  EXPECT_GT(a.handle("h2")->detections.size(), 0u);
}

TEST(Tools, SingleDaySeriesIsStoredValue) {
  Session s(world(), {});
  const std::string day = format_date(epoch_start() + 10);
  const Json p = ok_payload(s.execute(call("query_series", {{"region", "R1"}, {"variable", "ndvi"},
                                                            {"start_date", day}, {"end_date", day},
                                                            {"aggregate", "mean"}})));
  EXPECT_EQ(p["value"].get<double>(), *world().series_value("R1", "ndvi", epoch_start() + 10));
}

TEST(Tools, SeriesAggregates) {
  Session s(world(), {});
  std::vector<double> vals;
  for (const auto* r : world().series_rows("R2", "lst")) {
    if (r->date >= epoch_start() && r->date < epoch_start() + 5) vals.push_back(r->value);
  }
  ASSERT_EQ(vals.size(), 5u);
  auto q = [&](const char* agg) {
    return ok_payload(s.execute(call("query_series", {{"region", "R2"}, {"variable", "lst"},
                                                      {"start_date", "2020-04-01"},
                                                      {"end_date", "2020-04-05"}, {"aggregate", agg}})))
        ["value"].get<double>();
  };
  double sum = 0;
  for (double v : vals) sum += v;
  EXPECT_DOUBLE_EQ(q("sum"), sum);
  EXPECT_DOUBLE_EQ(q("mean"), sum / 5);
  EXPECT_EQ(q("min"), *std::min_element(vals.begin(), vals.end()));
  EXPECT_EQ(q("max"), *std::max_element(vals.begin(), vals.end()));
}

TEST(Tools, EmptyResultsWarnButSucceed) {
  Session s(world(), {});
  ok_payload(s.execute(call("load_product", {{"product", "xview1"}})));
  const Json p = ok_payload(s.execute(call("filter_spatial", {{"handle", "h1"}, {"bbox", {0.0, 89.0, 0.5, 89.5}}})));
  EXPECT_EQ(p["count"], 0);
  EXPECT_EQ(p["warning"], "EmptyResult");
  const Json q = ok_payload(s.execute(call("query_series", {{"region", "R1"}, {"variable", "ndvi"},
                                                            {"start_date", "2021-01-01"},
                                                            {"end_date", "2021-01-02"}, {"aggregate", "mean"}})));
  EXPECT_TRUE(q["value"].is_null());
}

TEST(Tools, FailuresAreErrorResultsAndAllocateNoHandle) {
  Session s(world(), {});
  const auto bad_arg = s.execute(call("filter_temporal", {{"handle", "h1"}, {"startdate", "2020-05-01"},
                                                          {"end_date", "2020-05-31"}}));
  EXPECT_FALSE(bad_arg.result.ok());
  EXPECT_NE(bad_arg.result.payload.find("startdate"), std::string::npos);
  EXPECT_FALSE(s.execute(call("filter_temporal", {{"handle", "h9"}, {"start_date", "2020-05-01"},
                                                  {"end_date", "2020-05-31"}}))
                   .result.ok());
  EXPECT_FALSE(s.execute(call("load_product", {{"product", "landsat"}})).result.ok());
  EXPECT_FALSE(s.execute(call("nonexistent", Json::object())).result.ok());
  const Json p = ok_payload(s.execute(call("load_product", {{"product", "xview1"}})));
  EXPECT_EQ(p["handle"], "h1");
  // Kind mismatch: image set into filter_category.
  const auto km = s.execute(call("filter_category", {{"handle", "h1"}, {"category", "ship"}}));
  EXPECT_FALSE(km.result.ok());
  EXPECT_EQ(km.result.payload.rfind("KindMismatch", 0), 0u);
  EXPECT_FALSE(s.execute(call("filter_temporal", {{"handle", "h1"}, {"start_date", "2020-5-1"},
                                                  {"end_date", "2020-05-31"}}))
                   .result.ok());
  const auto bad_enum = s.execute(call("load_product", {{"product", "XVIEW1"}}));
  EXPECT_NE(bad_enum.result.payload.find("one of {xview1, sentinel2, modis_terra}"), std::string::npos);
  EXPECT_EQ(s.calls_attempted(), 8u);
}

TEST(Tools, RenderMapWritesGeojsonArtifact) {
  TempDir dir("artifacts");
  Session s(world(), {"task_x", dir.str(), std::nullopt});
  ok_payload(s.execute(call("load_product", {{"product", "xview1"}})));
  ok_payload(s.execute(call("run_detection", {{"handle", "h1"}})));
  const Json p = ok_payload(s.execute(call("render_map", {{"handle", "h2"}})));
  EXPECT_EQ(p["path"], "task_x_map.geojson");
  ASSERT_EQ(s.artifacts(), std::vector<std::string>{"task_x_map.geojson"});
  const std::string body = read_file(dir / "task_x_map.geojson");
  EXPECT_EQ(body, s.artifact_contents().at("task_x_map.geojson"));
  const Json fc = Json::parse(body);
  EXPECT_EQ(fc["type"], "FeatureCollection");
  EXPECT_EQ(fc["features"].size(), s.handle("h2")->detections.size());
  EXPECT_FALSE(s.execute(call("render_map", {{"handle", "h2"}, {"out_path", "../x.geojson"}})).result.ok());
}

TEST(Tools, CorrelateSumsRegionalValues) {
  Session s(world(), {});
  ok_payload(s.execute(call("load_product", {{"product", "xview1"}})));
  ok_payload(s.execute(call("run_detection", {{"handle", "h1"}})));
  ok_payload(s.execute(call("filter_category", {{"handle", "h2"}, {"category", "building"}})));
  const Json p = ok_payload(s.execute(call("correlate", {{"damage_handle", "h3"}, {"population_variable", "population"}})));
  double expected = 0;
  std::size_t matched = 0;
  for (const auto& d : s.handle("h3")->detections) {
    const auto& img = world().images()[d.image];
    if (const Region* r = world().region_at(img.lat, img.lon)) {
      expected += *world().series_value(r->name, "population", img.date);
      ++matched;
    }
  }
  EXPECT_EQ(p["matched"].get<std::size_t>(), matched);
  EXPECT_DOUBLE_EQ(p["value"].get<double>(), expected);
}

TEST(Tools, FinalAnswerRecorded) {
  Session s(world(), {});
  ok_payload(s.execute(call("final_answer", {{"answer", "There are 4."}, {"value", 4}})));
  ASSERT_TRUE(s.answer());
  EXPECT_EQ(s.answer()->text, "There are 4.");
  EXPECT_EQ(s.answer()->value, 4.0);
}

TEST(Faults, DegenerateRates) {
  FaultPlan never{0.0, 11, {}};
  FaultPlan always{1.0, 11, {}};
  for (std::uint64_t i = 0; i < 1000; ++i) {
    EXPECT_FALSE(next_fault(never, "t", i));
    EXPECT_TRUE(next_fault(always, "t", i));
  }
}

TEST(Faults, RateIsHonoured) {
  FaultPlan plan{0.2, 11, {}};
  int fired = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) fired += next_fault(plan, "task", i);
  EXPECT_GE(fired, 1800);
  EXPECT_LE(fired, 2200);
}

TEST(Faults, PureInSeedTaskAndIndex) {
  FaultPlan plan{0.5, 3, {}};
  std::vector<bool> a, b, c;
  for (std::uint64_t i = 0; i < 64; ++i) {
    a.push_back(next_fault(plan, "alpha", i));
    b.push_back(next_fault(plan, "alpha", i));
    c.push_back(next_fault(plan, "beta", i));
  }
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Faults, SessionInjectsTransientErrorsInScope) {
  Session s(world(), {"t", "", FaultPlan{1.0, 1, {"load_product"}}});
  const auto f = s.execute(call("load_product", {{"product", "xview1"}}));
  EXPECT_TRUE(f.injected_fault);
  EXPECT_EQ(f.result.payload, kInjectedFaultPayload);
  EXPECT_EQ(s.handle("h1"), nullptr);
  EXPECT_TRUE(s.execute(call("list_products", Json::object())).result.ok());
  EXPECT_EQ(s.calls_attempted(), 2u);
}

}  // namespace
}  // namespace geoflow
