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
#include <vector>

#include "geoflow/sandbox.hpp"

namespace geoflow {

/// Default relative tolerance for coordinate parameters.
inline constexpr double kCoordinateTolerance = 0.10;

/// One expected step of a gold trajectory.
struct CallMatcher {
  std::string name;
  Json required_args = Json::object();
  std::map<std::string, double> arg_tolerances;
  /// Workflow state the step belongs to; used when synthesizing replay
  /// scripts, ignored by matching.
  std::string stage;

  friend bool operator==(const CallMatcher&, const CallMatcher&) = default;
};

enum class AnswerKind { none, numeric, detections, artifact };

std::string_view to_string(AnswerKind kind) noexcept;

struct GoldDetection {
  std::string id;
  std::string image_id;
  std::string category;
  NormBox bbox{};
  friend bool operator==(const GoldDetection&, const GoldDetection&) = default;
};

struct GoldAnswer {
  AnswerKind kind = AnswerKind::none;
  double value = 0.0;       // numeric
  double tolerance = 0.10;  // relative, numeric
  std::vector<GoldDetection> detections;
  friend bool operator==(const GoldAnswer&, const GoldAnswer&) = default;
};

struct TaskSpec {
  std::string task_id;
  std::string template_id;
  std::string query;
  std::optional<std::string> intent_gold;
  std::vector<CallMatcher> gold_trajectory;
  GoldAnswer gold_answer;
  CatalogParams scenario;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

class TaskError : public Error {
 public:
  using Error::Error;
};

/// Throws TaskError when the gold trajectory is empty or a tolerance lies
/// outside [0, 1).
void validate_task(const TaskSpec& task);

Json to_json(const CallMatcher& m);
CallMatcher matcher_from_json(const Json& j);
Json to_json(const TaskSpec& task);
TaskSpec task_from_json(const Json& j);

/// Line-delimited JSON, one TaskSpec per line.
std::string tasks_jsonl(const std::vector<TaskSpec>& tasks);
std::vector<TaskSpec> parse_tasks_jsonl(std::string_view text);
std::vector<TaskSpec> load_tasks(const std::string& path);

/// Tolerance applied to `param` of `m`: explicit entry, else the coordinate
/// default for coordinate-named parameters, else 0.
double tolerance_for(const CallMatcher& m, std::string_view param);
bool is_coordinate_param(std::string_view param) noexcept;

}  // namespace geoflow
