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

#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geoflow/agent.hpp"
#include "geoflow/backends.hpp"
#include "geoflow/task.hpp"

namespace geoflow {

// ---------------------------------------------------------------------------
// Trajectory matching
// ---------------------------------------------------------------------------

/// Strings: equal after trim and case-fold. Numbers: relative error within
/// `tolerance` (absolute when gold is 0). Arrays: element-wise.
bool values_match(const Json& gold, const Json& actual, double tolerance);

/// Every required argument of `gold` is present in `call` and matches.
bool call_matches(const CallMatcher& gold, const ToolCall& call);

struct TrajectoryMatch {
  double correctness = 0.0;  // |LCS| / max(|gold|, |executed|); 1 when both empty
  std::size_t lcs = 0;
  std::vector<std::pair<std::size_t, std::size_t>> alignment;  // (gold, executed)
};

TrajectoryMatch match_trajectory(const std::vector<CallMatcher>& gold,
                                 const std::vector<ToolCall>& executed);

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

class MissingPrediction : public Error {
 public:
  using Error::Error;
};

struct EoError {
  double value = 0.0;
  bool absolute = false;  // gold was 0, so the absolute error is reported
};

/// Relative error, absolute when gold is 0.
EoError eo_error(double predicted, double gold);
/// Throws MissingPrediction when the run carries no numeric answer.
EoError eo_error(const std::optional<AnswerRecord>& answer, double gold);

/// Artifact body for `name`: the in-memory copy, else `<artifact_root>/<name>`.
std::optional<std::string> artifact_body(const RunRecord& run, const std::string& name,
                                         const std::string& artifact_root);

/// Detection ids found in a rendered GeoJSON artifact; nullopt if it does not
/// parse as a FeatureCollection.
std::optional<std::vector<GoldDetection>> parse_geojson_detections(std::string_view text);

bool success_check(const TaskSpec& task, const RunRecord& run,
                   const std::string& artifact_root = "");

struct DetectionScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool both_empty = false;
};

double iou(const NormBox& a, const NormBox& b) noexcept;

/// Greedy one-to-one matching by descending IoU; a pair needs the same image
/// and category and IoU >= threshold.
DetectionScores detection_metrics(const std::vector<GoldDetection>& predicted,
                                  const std::vector<GoldDetection>& gold,
                                  double iou_threshold = 0.5);

// ---------------------------------------------------------------------------
// Cost
// ---------------------------------------------------------------------------

struct ModelRates {
  double input = 0.0;  // currency per 1e6 tokens
  double cached = 0.0;
  double output = 0.0;
};

struct LocalRates {
  double hourly_rate = 0.0;
  int capacity = 1;
};

struct PricingTable {
  std::map<std::string, ModelRates> models;
  std::optional<LocalRates> local;
};

class PricingError : public Error {
 public:
  using Error::Error;
};

class UnknownModelPricing : public PricingError {
 public:
  using PricingError::PricingError;
};

/// Reads the pricing document:
///
///   [models."gpt-4o"]
///   input = 2.50
///   cached = 1.25
///   output = 10.00
///
///   [local]
///   hourly_rate = 10.0
///   capacity = 8
PricingTable parse_pricing(std::string_view text);
PricingTable load_pricing(const std::string& path);

double compute_cost(const TokenTotals& tokens, double wall_seconds, const PricingTable& pricing,
                    CostBasis basis, const std::string& model);
double compute_cost(const RunRecord& run, const PricingTable& pricing, CostBasis basis,
                    const std::string& model);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct TaskRow {
  std::string task_id;
  std::string intent;
  std::string status;
  bool success = false;
  double correctness = 0.0;
  std::optional<double> eps;
  bool eps_absolute = false;
  bool eps_capped = false;
  std::optional<double> recall;
  std::optional<double> f1;
  bool detection_both_empty = false;
  std::int64_t tokens = 0;
  bool tokens_estimated = false;
  double cost = 0.0;
  friend bool operator==(const TaskRow&, const TaskRow&) = default;
};

struct MetricsReport {
  std::size_t tasks = 0;
  double success_rate = 0.0;      // percent
  double correctness_rate = 0.0;  // percent
  std::map<std::string, std::optional<double>> per_domain_eps;  // agro, climate, urban, forest
  std::optional<double> vision_recall;  // percent
  std::optional<double> detection_f1;   // percent
  double avg_tokens_k = 0.0;
  double total_cost = 0.0;
  std::vector<TaskRow> rows;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Domain key for an intent: Forest -> forest, Agriculture -> agro, ...
std::optional<std::string> domain_of(const std::optional<std::string>& intent);

/// Runs are matched to tasks by task_id; throws Error when one has no task.
/// Costs are read from the runs.
MetricsReport aggregate_report(const std::vector<RunRecord>& runs,
                               const std::vector<TaskSpec>& tasks,
                               const std::string& artifact_root = "");

Json to_json(const MetricsReport& report);
MetricsReport report_from_json(const Json& j);
/// Plain-text table with the benchmark columns.
std::string render_report_table(const MetricsReport& report);

// ---------------------------------------------------------------------------
// Gating simulation
// ---------------------------------------------------------------------------

struct GatingEstimate {
  double analytic = 0.0;
  double empirical = 0.0;
};

struct GatingSimulation {
  GatingEstimate full;
  GatingEstimate gated;
};

/// Product over steps of (1 - eta) + eta / |T_k|.
double gating_success_analytic(double eta, const std::vector<std::size_t>& sizes);
/// Monte Carlo with a per-trial random policy. Deterministic in seed.
double gating_success_empirical(double eta, const std::vector<std::size_t>& sizes,
                                std::size_t trials, std::uint64_t seed);

/// Compares presenting the full toolset at every step with presenting the
/// gated set of each step.
GatingSimulation simulate_gating_policy(double eta, std::size_t full_toolset_size,
                                        const std::vector<std::size_t>& gated_sizes,
                                        std::size_t trials, std::uint64_t seed);

}  // namespace geoflow
