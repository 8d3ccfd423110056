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

#include "geoflow/task.hpp"

#include <array>
#include <sstream>

namespace geoflow {

std::string_view to_string(AnswerKind kind) noexcept {
  switch (kind) {
    case AnswerKind::none: return "none";
    case AnswerKind::numeric: return "numeric";
    case AnswerKind::detections: return "detections";
    case AnswerKind::artifact: return "artifact";
  }
  return "none";
}

namespace {

AnswerKind answer_kind_from_string(std::string_view s) {
  if (s == "none") return AnswerKind::none;
  if (s == "numeric") return AnswerKind::numeric;
  if (s == "detections") return AnswerKind::detections;
  if (s == "artifact") return AnswerKind::artifact;
  throw TaskError("unknown answer kind '" + std::string(s) + "'");
}

}  // namespace

bool is_coordinate_param(std::string_view param) noexcept {
  static constexpr std::array<std::string_view, 9> kNames{
      "bbox", "lat", "lon", "latitude", "longitude", "west", "south", "east", "north"};
  for (auto n : kNames) {
    if (n == param) return true;
  }
  return false;
}

double tolerance_for(const CallMatcher& m, std::string_view param) {
  if (auto it = m.arg_tolerances.find(std::string(param)); it != m.arg_tolerances.end()) {
    return it->second;
  }
  return is_coordinate_param(param) ? kCoordinateTolerance : 0.0;
}

void validate_task(const TaskSpec& task) {
  if (task.task_id.empty()) throw TaskError("task has no task_id");
  if (task.gold_trajectory.empty()) {
    throw TaskError("task '" + task.task_id + "' has an empty gold trajectory");
  }
  for (const auto& m : task.gold_trajectory) {
    if (!m.required_args.is_object()) {
      throw TaskError("task '" + task.task_id + "': required_args must be an object");
    }
    for (const auto& [param, tol] : m.arg_tolerances) {
      if (!(tol >= 0.0 && tol < 1.0)) {
        throw TaskError("task '" + task.task_id + "': tolerance for '" + param +
                        "' must lie in [0, 1)");
      }
    }
  }
  if (task.gold_answer.kind == AnswerKind::numeric &&
      !(task.gold_answer.tolerance >= 0.0 && task.gold_answer.tolerance < 1.0)) {
    throw TaskError("task '" + task.task_id + "': answer tolerance must lie in [0, 1)");
  }
}

Json to_json(const CallMatcher& m) {
  Json j = Json::object();
  j["name"] = m.name;
  j["required_args"] = m.required_args;
  Json tol = Json::object();
  for (const auto& [k, v] : m.arg_tolerances) tol[k] = v;
  j["arg_tolerances"] = std::move(tol);
  if (!m.stage.empty()) j["stage"] = m.stage;
  return j;
}

CallMatcher matcher_from_json(const Json& j) {
  CallMatcher m;
  m.name = j.at("name").get<std::string>();
  if (j.contains("required_args")) m.required_args = j.at("required_args");
  if (j.contains("arg_tolerances")) {
    for (const auto& [k, v] : j.at("arg_tolerances").items()) m.arg_tolerances[k] = v.get<double>();
  }
  m.stage = j.value("stage", std::string{});
  return m;
}

Json to_json(const TaskSpec& task) {
  Json j = Json::object();
  j["task_id"] = task.task_id;
  j["template_id"] = task.template_id;
  j["query"] = task.query;
  j["intent_gold"] = task.intent_gold ? Json(*task.intent_gold) : Json(nullptr);
  Json traj = Json::array();
  for (const auto& m : task.gold_trajectory) traj.push_back(to_json(m));
  j["gold_trajectory"] = std::move(traj);

  Json answer = Json::object();
  answer["kind"] = to_string(task.gold_answer.kind);
  if (task.gold_answer.kind == AnswerKind::numeric) {
    answer["value"] = task.gold_answer.value;
    answer["tolerance"] = task.gold_answer.tolerance;
  }
  if (task.gold_answer.kind == AnswerKind::detections) {
    Json dets = Json::array();
    for (const auto& d : task.gold_answer.detections) {
      Json dj = Json::object();
      dj["id"] = d.id;
      dj["image_id"] = d.image_id;
      dj["category"] = d.category;
      dj["bbox"] = d.bbox;
      dets.push_back(std::move(dj));
    }
    answer["detections"] = std::move(dets);
  }
  j["gold_answer"] = std::move(answer);

  Json scenario = Json::object();
  scenario["seed"] = task.scenario.seed;
  scenario["n_images"] = task.scenario.n_images;
  scenario["n_regions"] = task.scenario.n_regions;
  j["scenario"] = std::move(scenario);
  return j;
}

TaskSpec task_from_json(const Json& j) {
  TaskSpec t;
  try {
    t.task_id = j.at("task_id").get<std::string>();
    t.template_id = j.value("template_id", std::string{});
    t.query = j.at("query").get<std::string>();
    if (j.contains("intent_gold") && j.at("intent_gold").is_string()) {
      t.intent_gold = j.at("intent_gold").get<std::string>();
    }
    for (const auto& m : j.at("gold_trajectory")) t.gold_trajectory.push_back(matcher_from_json(m));
    if (j.contains("gold_answer")) {
      const Json& a = j.at("gold_answer");
      t.gold_answer.kind = answer_kind_from_string(a.value("kind", std::string("none")));
      t.gold_answer.value = a.value("value", 0.0);
      t.gold_answer.tolerance = a.value("tolerance", 0.10);
      if (a.contains("detections")) {
        for (const auto& d : a.at("detections")) {
          t.gold_answer.detections.push_back({d.at("id").get<std::string>(),
                                              d.at("image_id").get<std::string>(),
                                              d.at("category").get<std::string>(),
                                              d.at("bbox").get<NormBox>()});
        }
      }
    }
    if (j.contains("scenario")) {
      const Json& s = j.at("scenario");
      t.scenario.seed = s.value("seed", std::uint64_t{7});
      t.scenario.n_images = s.value("n_images", std::size_t{400});
      t.scenario.n_regions = s.value("n_regions", std::size_t{8});
    }
  } catch (const nlohmann::json::exception& e) {
    throw TaskError(std::string("malformed task: ") + e.what());
  }
  validate_task(t);
  return t;
}

std::string tasks_jsonl(const std::vector<TaskSpec>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    out += to_json(t).dump();
    out += '\n';
  }
  return out;
}

std::vector<TaskSpec> parse_tasks_jsonl(std::string_view text) {
  std::vector<TaskSpec> tasks;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      tasks.push_back(task_from_json(Json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw TaskError("tasks line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return tasks;
}

std::vector<TaskSpec> load_tasks(const std::string& path) {
  return parse_tasks_jsonl(read_file(path));
}

}  // namespace geoflow
