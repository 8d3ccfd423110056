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

#include "geoflow/backends.hpp"
#include "geoflow/sandbox.hpp"
#include "geoflow/task.hpp"
#include "geoflow/workflow.hpp"

namespace geoflow {

class TemplateError : public Error {
 public:
  using Error::Error;
};

class SlotError : public TemplateError {
 public:
  using TemplateError::TemplateError;
};

/// How a gold answer is computed from the catalog.
enum class AnswerRule { detections, object_count, series, correlate };

struct TemplateStep {
  std::string name;
  std::string stage;
  Json args = Json::object();  // "{slot}" placeholders, "@prev" for the latest handle
};

/// Slot sampling rules. Empty vectors mean the slot is not used.
struct SlotRules {
  std::vector<std::string> products;
  std::vector<std::string> categories;
  std::vector<std::string> variables;
  std::vector<std::string> aggregates;
  bool region = false;
  std::string bbox;  // "", "region" or "empty"
  std::string dates;  // "", "month" or "window"
};

struct TaskTemplate {
  std::string template_id;
  std::optional<std::string> intent;  // Vision, Forest, Urban, Climate, Agriculture
  std::string query;                  // "{slot}" placeholders
  bool probe = false;                 // gold answer must be empty/zero
  SlotRules slots;
  std::vector<TemplateStep> trajectory;
  AnswerRule answer = AnswerRule::object_count;
};

/// Bound slot values. Keys: product, region, bbox, start_date, end_date,
/// category, variable, aggregate, answer_value, plus the query-only forms
/// month_name and bbox_text.
using SlotValues = std::map<std::string, Json>;

TaskTemplate template_from_json(const Json& j);
/// Parses `{"templates": [...]}` and validates each template.
std::vector<TaskTemplate> parse_templates(std::string_view document);
std::vector<TaskTemplate> load_templates(const std::string& path);
/// Throws TemplateError: unknown tools, parameters or intents, and query slots
/// the trajectory never consumes.
void validate_template(const TaskTemplate& t);

/// Instantiates the trajectory pattern. Handles are numbered h1, h2, ... in
/// creation order; coordinate slots get the 0.10 tolerance and the answer value
/// the answer tolerance. Throws SlotError when a referenced slot is unbound.
std::vector<CallMatcher> derive_gold_trajectory(const TaskTemplate& t, const SlotValues& slots);

/// Brute-force answer by direct scan of the catalog.
GoldAnswer derive_gold_answer(const TaskTemplate& t, const SlotValues& slots, const World& world);

struct TaskGenOptions {
  std::size_t n_per_template = 13;
  std::uint64_t seed = 1;
};

/// Pure in (world, templates, options). Every task draws its slots from the
/// world's regions, dates and categories; samples whose gold is empty are
/// redrawn unless the template is a probe.
std::vector<TaskSpec> generate_tasks(const World& world, const CatalogParams& scenario,
                                     const std::vector<TaskTemplate>& templates,
                                     const TaskGenOptions& options);

// ---------------------------------------------------------------------------
// Gold replay scripts
// ---------------------------------------------------------------------------

struct ScriptOptions {
  /// Same plan the run will use; reflection entries are scripted for every
  /// fault it fires.
  std::optional<FaultPlan> faults;
  /// Emit TERMINATE early (second turn when possible) with a confirmation
  /// reply that rejects it.
  bool premature_terminate = false;
};

/// Scripts the stateflow agent through the task's gold trajectory on `wf`.
ReplayScript build_replay_script(const TaskSpec& task, const WorkflowSpec& wf,
                                 const ScriptOptions& options = {});

/// Executes gold matchers literally. Used as the self-consistency oracle.
struct GoldReplay {
  std::vector<ToolOutcome> outcomes;
  std::optional<double> last_value;  // last numeric "count" or "value" payload
  std::optional<AnswerRecord> answer;
  std::map<std::string, std::string> artifacts;
};

/// Tool calls a gold trajectory implies, with complete arguments.
std::vector<ToolCall> gold_calls(const TaskSpec& task);
GoldReplay interpret_gold(const TaskSpec& task, const World& world);

}  // namespace geoflow
