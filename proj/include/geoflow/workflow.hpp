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
#include <variant>
#include <vector>

#include "geoflow/tools.hpp"

namespace geoflow {

/// The universal termination/answer tool exposed in every state.
inline constexpr std::string_view kFinalAnswerTool = "final_answer";

struct FewShot {
  std::string user;
  std::string assistant;
  std::vector<ToolCall> tool_calls;
};

struct StateSpec {
  std::string name;
  std::string instructions;
  std::vector<std::string> allowed_tools;
  std::vector<FewShot> few_shot;
  bool is_terminal = false;
  bool is_error = false;
};

struct IntentRoute {
  std::string intent;
  std::string entry_state;
};

/// A validated state machine: states, successor map, optional intent routes.
struct WorkflowSpec {
  std::string name;
  std::string preamble;
  std::string initial;
  std::vector<StateSpec> states;
  std::map<std::string, std::vector<std::string>> transitions;
  std::vector<IntentRoute> intent_routes;  // in document order
  std::string default_intent;              // first route unless overridden

  const StateSpec* find_state(std::string_view state) const noexcept;
  const StateSpec* error_state() const noexcept;
  const IntentRoute* find_route(std::string_view intent) const noexcept;
};

class WorkflowError : public Error {
 public:
  using Error::Error;
};
class SchemaError : public WorkflowError {
 public:
  using WorkflowError::WorkflowError;
};
class GraphError : public WorkflowError {
 public:
  using WorkflowError::WorkflowError;
};
class UnknownTool : public WorkflowError {
 public:
  using WorkflowError::WorkflowError;
};
class UnknownState : public WorkflowError {
 public:
  using WorkflowError::WorkflowError;
};

/// Parses and validates a workflow document (JSON). Diagnostics carry a
/// JSON-pointer-like path, e.g. `states[3].next[0]`.
WorkflowSpec load_workflow_spec(std::string_view document, const ToolRegistry& registry);
WorkflowSpec load_workflow_file(const std::string& path, const ToolRegistry& registry);

struct TagMatch {
  std::string value;
  std::size_t begin = 0;  // byte offsets of the whole `KEY = value` span
  std::size_t end = 0;

  friend bool operator==(const TagMatch&, const TagMatch&) = default;
};

/// Last `keyword [ ]*=[ ]* identifier` occurrence in text. Never throws.
std::optional<TagMatch> parse_tag(std::string_view text, std::string_view keyword) noexcept;
std::optional<TagMatch> parse_stage(std::string_view assistant_text) noexcept;
std::optional<TagMatch> parse_intent(std::string_view assistant_text) noexcept;

/// Whole-word, case-sensitive `TERMINATE` anywhere in text.
bool contains_terminate(std::string_view text) noexcept;

enum class TransitionMode { clamp, strict };

struct TransitionDecision {
  enum class Kind { accept, clamp, reject };
  Kind kind = Kind::accept;
  std::string state;   // resulting state for accept/clamp
  std::string reason;  // diagnostic for clamp/reject

  bool accepted() const noexcept { return kind == Kind::accept; }
};

/// Throws UnknownState when `current` is not a state of the workflow.
TransitionDecision validate_transition(const WorkflowSpec& spec, std::string_view current,
                                       std::string_view proposed,
                                       TransitionMode mode = TransitionMode::clamp);

/// Definitions for the state's allowed tools in spec order, plus final_answer.
/// Throws UnknownState.
std::vector<ToolDefinition> tools_for_state(const WorkflowSpec& spec, std::string_view state,
                                            const ToolRegistry& registry);

/// True when the non-error transition graph has no cycles other than
/// self-loops.
bool is_acyclic(const WorkflowSpec& spec);

}  // namespace geoflow
