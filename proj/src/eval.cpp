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

#include "geoflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace geoflow {

// ---------------------------------------------------------------------------
// Trajectory matching
// ---------------------------------------------------------------------------

bool values_match(const Json& gold, const Json& actual, double tolerance) {
  if (gold.is_number() && actual.is_number()) {
    const double g = gold.get<double>();
    const double a = actual.get<double>();
    if (g == a) return true;
    const double err = g == 0.0 ? std::fabs(a) : std::fabs(a - g) / std::fabs(g);
    return err <= tolerance;
  }
  if (gold.is_string() && actual.is_string()) {
    return casefold(trim(gold.get<std::string>())) == casefold(trim(actual.get<std::string>()));
  }
  if (gold.is_array() && actual.is_array()) {
    if (gold.size() != actual.size()) return false;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (!values_match(gold[i], actual[i], tolerance)) return false;
    }
    return true;
  }
  return gold == actual;
}

bool call_matches(const CallMatcher& gold, const ToolCall& call) {
  if (gold.name != call.name) return false;
  if (!call.arguments.is_object()) return gold.required_args.empty();
  for (const auto& [param, value] : gold.required_args.items()) {
    auto it = call.arguments.find(param);
    if (it == call.arguments.end()) return false;
    if (!values_match(value, *it, tolerance_for(gold, param))) return false;
  }
  return true;
}

TrajectoryMatch match_trajectory(const std::vector<CallMatcher>& gold,
                                 const std::vector<ToolCall>& executed) {
  const std::size_t n = gold.size();
  const std::size_t m = executed.size();
  TrajectoryMatch out;
  if (n == 0 && m == 0) {
    out.correctness = 1.0;
    return out;
  }
  std::vector<std::vector<char>> eq(n, std::vector<char>(m, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) eq[i][j] = call_matches(gold[i], executed[j]) ? 1 : 0;
  }
  std::vector<std::vector<std::size_t>> dp(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      dp[i][j] = eq[i][j] ? dp[i + 1][j + 1] + 1 : std::max(dp[i + 1][j], dp[i][j + 1]);
    }
  }
  for (std::size_t i = 0, j = 0; i < n && j < m;) {
    if (eq[i][j] && dp[i][j] == dp[i + 1][j + 1] + 1) {
      out.alignment.emplace_back(i, j);
      ++i;
      ++j;
    } else if (dp[i + 1][j] >= dp[i][j + 1]) {
      ++i;
    } else {
      ++j;
    }
  }
  out.lcs = dp[0][0];
  out.correctness = static_cast<double>(out.lcs) / static_cast<double>(std::max(n, m));
  return out;
}

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

EoError eo_error(double predicted, double gold) {
  if (gold == 0.0) return {std::fabs(predicted), true};
  return {std::fabs(predicted - gold) / std::fabs(gold), false};
}

EoError eo_error(const std::optional<AnswerRecord>& answer, double gold) {
  if (!answer || !answer->value) throw MissingPrediction("run produced no numeric answer");
  return eo_error(*answer->value, gold);
}

std::optional<std::string> artifact_body(const RunRecord& run, const std::string& name,
                                         const std::string& artifact_root) {
  if (auto it = run.artifact_contents.find(name); it != run.artifact_contents.end()) {
    return it->second;
  }
  if (artifact_root.empty()) return std::nullopt;
  const auto path = std::filesystem::path(artifact_root) / name;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
  try {
    return read_file(path.string());
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::optional<std::vector<GoldDetection>> parse_geojson_detections(std::string_view text) {
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
      !doc.contains("features") || !doc.at("features").is_array()) {
    return std::nullopt;
  }
  std::vector<GoldDetection> out;
  for (const auto& f : doc.at("features")) {
    if (!f.is_object() || !f.contains("properties")) return std::nullopt;
    const Json& p = f.at("properties");
    GoldDetection d;
    d.id = p.value("detection_id", "");
    d.image_id = p.value("image_id", "");
    d.category = p.value("category", "");
    if (p.contains("bbox") && p.at("bbox").is_array() && p.at("bbox").size() == 4) {
      for (std::size_t i = 0; i < 4; ++i) d.bbox[i] = p.at("bbox")[i].get<double>();
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

/// Detections from the last parseable map artifact of the run.
std::optional<std::vector<GoldDetection>> rendered_detections(const RunRecord& run,
                                                              const std::string& root) {
  for (auto it = run.artifacts.rbegin(); it != run.artifacts.rend(); ++it) {
    if (auto body = artifact_body(run, *it, root)) {
      if (auto dets = parse_geojson_detections(*body)) return dets;
    }
  }
  return std::nullopt;
}

constexpr double kSlack = 1e-12;

}  // namespace

bool success_check(const TaskSpec& task, const RunRecord& run, const std::string& artifact_root) {
  if (run.status != RunStatus::completed) return false;
  const GoldAnswer& gold = task.gold_answer;
  switch (gold.kind) {
    case AnswerKind::none:
      return true;
    case AnswerKind::numeric: {
      if (!run.final_answer || !run.final_answer->value) return false;
      return eo_error(*run.final_answer->value, gold.value).value <= gold.tolerance + kSlack;
    }
    case AnswerKind::detections: {
      auto dets = rendered_detections(run, artifact_root);
      if (!dets) return false;
      for (const auto& g : gold.detections) {
        const bool found = std::any_of(dets->begin(), dets->end(),
                                       [&](const GoldDetection& d) { return d.id == g.id; });
        if (!found) return false;
      }
      return true;
    }
    case AnswerKind::artifact: {
      for (const auto& name : run.artifacts) {
        if (auto body = artifact_body(run, name, artifact_root)) {
          if (!Json::parse(*body, nullptr, false).is_discarded()) return true;
        }
      }
      return false;
    }
  }
  return false;
}

double iou(const NormBox& a, const NormBox& b) noexcept {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]);
  const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

DetectionScores detection_metrics(const std::vector<GoldDetection>& predicted,
                                  const std::vector<GoldDetection>& gold, double iou_threshold) {
  DetectionScores s;
  if (predicted.empty() && gold.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    s.both_empty = true;
    return s;
  }
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t j = 0; j < gold.size(); ++j) {
      if (predicted[i].image_id != gold[j].image_id || predicted[i].category != gold[j].category) {
        continue;
      }
      const double v = iou(predicted[i].bbox, gold[j].bbox);
      if (v >= iou_threshold) pairs.push_back({v, i, j});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<bool> used_p(predicted.size()), used_g(gold.size());
  std::size_t tp = 0;
  for (const auto& pr : pairs) {
    if (used_p[pr.p] || used_g[pr.g]) continue;
    used_p[pr.p] = used_g[pr.g] = true;
    ++tp;
  }
  s.precision = predicted.empty() ? 0.0 : static_cast<double>(tp) / predicted.size();
  s.recall = gold.empty() ? 0.0 : static_cast<double>(tp) / gold.size();
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Cost
// ---------------------------------------------------------------------------

double compute_cost(const TokenTotals& tokens, double wall_seconds, const PricingTable& pricing,
                    CostBasis basis, const std::string& model) {
  if (basis == CostBasis::local) {
    if (!pricing.local) throw PricingError("pricing has no [local] section");
    return (pricing.local->hourly_rate / pricing.local->capacity) * (wall_seconds / 3600.0);
  }
  auto it = pricing.models.find(model);
  if (it == pricing.models.end()) {
    throw UnknownModelPricing("no pricing for model '" + model + "'");
  }
  const ModelRates& r = it->second;
  return (static_cast<double>(tokens.input_tokens) * r.input +
          static_cast<double>(tokens.cached_tokens) * r.cached +
          static_cast<double>(tokens.output_tokens) * r.output) *
         1e-6;
}

double compute_cost(const RunRecord& run, const PricingTable& pricing, CostBasis basis,
                    const std::string& model) {
  return compute_cost(run.usage.tokens, run.usage.wall_seconds, pricing, basis, model);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

std::optional<std::string> domain_of(const std::optional<std::string>& intent) {
  if (!intent) return std::nullopt;
  const std::string k = casefold(*intent);
  if (k == "forest") return "forest";
  if (k == "urban") return "urban";
  if (k == "climate") return "climate";
  if (k == "agriculture") return "agro";
  return std::nullopt;
}

namespace {

const std::array<std::string, 4> kDomains{"agro", "climate", "urban", "forest"};

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Json opt_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> number_or_null(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

MetricsReport aggregate_report(const std::vector<RunRecord>& runs,
                               const std::vector<TaskSpec>& tasks,
                               const std::string& artifact_root) {
  std::map<std::string, const TaskSpec*> by_id;
  for (const auto& t : tasks) by_id[t.task_id] = &t;

  MetricsReport rep;
  std::vector<double> succ, corr, recall, f1;
  std::map<std::string, std::vector<double>> eps;
  double tokens = 0;
  for (const auto& run : runs) {
    auto it = by_id.find(run.task_id);
    if (it == by_id.end()) throw Error("run '" + run.task_id + "' has no matching task");
    const TaskSpec& task = *it->second;

    TaskRow row;
    row.task_id = run.task_id;
    row.intent = task.intent_gold.value_or("");
    row.status = std::string(to_string(run.status));
    row.success = success_check(task, run, artifact_root);
    row.correctness = match_trajectory(task.gold_trajectory, run.executed_calls()).correctness;
    row.tokens = run.usage.tokens.total();
    row.tokens_estimated = run.usage.tokens.estimated;
    row.cost = run.cost;

    if (task.gold_answer.kind == AnswerKind::numeric) {
      try {
        EoError e = eo_error(run.final_answer, task.gold_answer.value);
        row.eps = e.value;
        row.eps_absolute = e.absolute;
      } catch (const MissingPrediction&) {
        row.eps = 1.0;
        row.eps_capped = true;
      }
      if (auto d = domain_of(task.intent_gold)) eps[*d].push_back(*row.eps);
    }
    if (task.gold_answer.kind == AnswerKind::detections) {
      std::vector<GoldDetection> predicted;
      if (auto dets = rendered_detections(run, artifact_root)) predicted = std::move(*dets);
      DetectionScores s = detection_metrics(predicted, task.gold_answer.detections);
      row.recall = s.recall;
      row.f1 = s.f1;
      row.detection_both_empty = s.both_empty;
      recall.push_back(s.recall);
      f1.push_back(s.f1);
    }

    succ.push_back(row.success ? 1.0 : 0.0);
    corr.push_back(row.correctness);
    tokens += static_cast<double>(row.tokens);
    rep.total_cost += row.cost;
    rep.rows.push_back(std::move(row));
  }

  rep.tasks = runs.size();
  rep.success_rate = 100.0 * mean(succ);
  rep.correctness_rate = 100.0 * mean(corr);
  for (const auto& d : kDomains) {
    auto e = eps.find(d);
    rep.per_domain_eps[d] =
        e == eps.end() ? std::nullopt : std::optional<double>(100.0 * mean(e->second));
  }
  if (!recall.empty()) {
    rep.vision_recall = 100.0 * mean(recall);
    rep.detection_f1 = 100.0 * mean(f1);
  }
  rep.avg_tokens_k = runs.empty() ? 0.0 : tokens / static_cast<double>(runs.size()) / 1000.0;
  return rep;
}

Json to_json(const MetricsReport& r) {
  Json j = Json::object();
  j["tasks"] = r.tasks;
  j["success_rate"] = r.success_rate;
  j["correctness_rate"] = r.correctness_rate;
  Json eps = Json::object();
  for (const auto& [k, v] : r.per_domain_eps) eps[k] = opt_number(v);
  j["per_domain_eps"] = std::move(eps);
  j["vision_recall"] = opt_number(r.vision_recall);
  j["detection_f1"] = opt_number(r.detection_f1);
  j["avg_tokens_k"] = r.avg_tokens_k;
  j["total_cost"] = r.total_cost;
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json x = Json::object();
    x["task_id"] = row.task_id;
    x["intent"] = row.intent;
    x["status"] = row.status;
    x["success"] = row.success;
    x["correctness"] = row.correctness;
    x["eps"] = opt_number(row.eps);
    x["eps_absolute"] = row.eps_absolute;
    x["eps_capped"] = row.eps_capped;
    x["recall"] = opt_number(row.recall);
    x["f1"] = opt_number(row.f1);
    x["detection_both_empty"] = row.detection_both_empty;
    x["tokens"] = row.tokens;
    x["tokens_estimated"] = row.tokens_estimated;
    x["cost"] = row.cost;
    rows.push_back(std::move(x));
  }
  j["rows"] = std::move(rows);
  return j;
}

MetricsReport report_from_json(const Json& j) {
  MetricsReport r;
  try {
    r.tasks = j.at("tasks").get<std::size_t>();
    r.success_rate = j.at("success_rate").get<double>();
    r.correctness_rate = j.at("correctness_rate").get<double>();
    for (const auto& [k, v] : j.at("per_domain_eps").items()) {
      r.per_domain_eps[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    r.vision_recall = number_or_null(j, "vision_recall");
    r.detection_f1 = number_or_null(j, "detection_f1");
    r.avg_tokens_k = j.at("avg_tokens_k").get<double>();
    r.total_cost = j.at("total_cost").get<double>();
    for (const auto& x : j.at("rows")) {
      TaskRow row;
      row.task_id = x.at("task_id").get<std::string>();
      row.intent = x.at("intent").get<std::string>();
      row.status = x.at("status").get<std::string>();
      row.success = x.at("success").get<bool>();
      row.correctness = x.at("correctness").get<double>();
      row.eps = number_or_null(x, "eps");
      row.eps_absolute = x.at("eps_absolute").get<bool>();
      row.eps_capped = x.at("eps_capped").get<bool>();
      row.recall = number_or_null(x, "recall");
      row.f1 = number_or_null(x, "f1");
      row.detection_both_empty = x.at("detection_both_empty").get<bool>();
      row.tokens = x.at("tokens").get<std::int64_t>();
      row.tokens_estimated = x.at("tokens_estimated").get<bool>();
      row.cost = x.at("cost").get<double>();
      r.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string render_report_table(const MetricsReport& r) {
  auto cell = [](const std::optional<double>& v, int prec) {
    if (!v) return std::string("-");
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << *v;
    return o.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(10) << "Correct.%" << std::setw(10) << "Success%" << std::setw(15)
      << "Tokens Avg(k)" << std::setw(12) << "Total Cost";
  for (const auto& d : kDomains) out << std::setw(14) << ("eps " + d + "%");
  out << std::setw(11) << "Vision R%" << "F1%\n";
  out << std::setw(10) << cell(r.correctness_rate, 2) << std::setw(10) << cell(r.success_rate, 2)
      << std::setw(15) << cell(r.avg_tokens_k, 3) << std::setw(12) << cell(r.total_cost, 4);
  for (const auto& d : kDomains) {
    auto it = r.per_domain_eps.find(d);
    out << std::setw(14) << cell(it == r.per_domain_eps.end() ? std::nullopt : it->second, 2);
  }
  out << std::setw(11) << cell(r.vision_recall, 2) << cell(r.detection_f1, 2) << "\n\n";

  out << std::setw(26) << "task" << std::setw(13) << "intent" << std::setw(21) << "status"
      << std::setw(9) << "success" << std::setw(9) << "correct" << std::setw(10) << "eps"
      << std::setw(9) << "tokens" << "cost\n";
  for (const auto& row : r.rows) {
    std::string eps = cell(row.eps, 4);
    if (row.eps_capped) eps += "*";
    if (row.eps_absolute) eps += "a";
    out << std::setw(26) << row.task_id << std::setw(13) << (row.intent.empty() ? "-" : row.intent)
        << std::setw(21) << row.status << std::setw(9) << (row.success ? "yes" : "no")
        << std::setw(9) << cell(row.correctness, 3) << std::setw(10) << eps << std::setw(9)
        << (std::to_string(row.tokens) + (row.tokens_estimated ? "~" : "")) << cell(row.cost, 6)
        << "\n";
  }
  out << "\n* no numeric answer, counted at the cap of 1.0; a: absolute error (gold 0); "
         "~ includes estimated tokens\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Gating simulation
// ---------------------------------------------------------------------------

double gating_success_analytic(double eta, const std::vector<std::size_t>& sizes) {
  double p = 1.0;
  for (std::size_t n : sizes) p *= (1.0 - eta) + eta / static_cast<double>(n);
  return p;
}

double gating_success_empirical(double eta, const std::vector<std::size_t>& sizes,
                                std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    bool all = true;
    for (std::size_t n : sizes) {
      // With probability eta the policy guesses uniformly over the presented
      // set; index 0 stands for the correct tool.
      const bool correct = !rng.bernoulli(eta) || rng.below(n) == 0;
      if (!correct) {
        all = false;
        break;
      }
    }
    if (all) ++ok;
  }
  return trials ? static_cast<double>(ok) / static_cast<double>(trials) : 0.0;
}

GatingSimulation simulate_gating_policy(double eta, std::size_t full_toolset_size,
                                        const std::vector<std::size_t>& gated_sizes,
                                        std::size_t trials, std::uint64_t seed) {
  if (eta < 0 || eta > 1) throw Error("eta must lie in [0, 1]");
  if (trials == 0) throw Error("trials must be at least 1");
  if (full_toolset_size == 0) throw Error("toolset size must be at least 1");
  for (std::size_t n : gated_sizes) {
    if (n == 0) throw Error("gated set sizes must be at least 1");
  }
  const std::vector<std::size_t> full(gated_sizes.size(), full_toolset_size);
  GatingSimulation s;
  s.full = {gating_success_analytic(eta, full),
            gating_success_empirical(eta, full, trials, seed)};
  s.gated = {gating_success_analytic(eta, gated_sizes),
             gating_success_empirical(eta, gated_sizes, trials, seed ^ 0x9E3779B97F4A7C15ULL)};
  return s;
}

}  // namespace geoflow
