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

#include <optional>
#include <string>
#include <vector>

#include "geoflow/backends.hpp"
#include "geoflow/ledger.hpp"
#include "geoflow/sandbox.hpp"
#include "geoflow/task.hpp"
#include "geoflow/workflow.hpp"

namespace geoflow {

enum class AgentMode { stateflow, react, react_errtrm };

std::string_view to_string(AgentMode mode) noexcept;
/// Accepts `stateflow`, `react`, `react-errtrm` and `react_errtrm`.
AgentMode agent_mode_from_string(std::string_view text);

struct AgentConfig {
  AgentMode mode = AgentMode::stateflow;
  int max_turns = 25;
  bool tool_gating = true;
  bool error_state_enabled = true;
  bool terminate_validation = true;
  int reminder_cap = 2;
  TransitionMode transition_mode = TransitionMode::clamp;

  /// Defaults for a mode: react disables all three mechanisms, react_errtrm
  /// keeps error and termination handling without gating.
  static AgentConfig for_mode(AgentMode mode);
  /// Applies the mode's forced flags to an edited config.
  AgentConfig normalized() const;
};

enum class RunStatus { completed, max_turns_exhausted, aborted };
std::string_view to_string(RunStatus status) noexcept;
RunStatus run_status_from_string(std::string_view text);

enum class TurnKind { model, correction };

struct RejectedCall {
  ToolCall call;
  std::string reason;
};

struct TurnRecord {
  int turn_index = 0;
  TurnKind kind = TurnKind::model;
  std::string state_before;
  std::string state_after;
  std::string assistant_text;
  std::vector<std::string> executed;  // call ids, in order
  std::vector<RejectedCall> rejected;
  bool reflected = false;
  bool terminate_seen = false;
  std::optional<bool> terminate_confirmed;
  std::optional<UsageRecord> usage;
  std::vector<std::string> diagnostics;
};

/// One backend call or correction turn, in issue order.
struct RunEvent {
  std::string kind;  // turn, correction, reflect, confirm, route
  int turn = 0;
  friend bool operator==(const RunEvent&, const RunEvent&) = default;
};

struct ExecutedCall {
  ToolCall call;
  ToolResult result;
  bool injected_fault = false;
  int turn = 0;
  std::string state_before;
  bool correction = false;
};

struct RunCounts {
  int model_turns = 0;
  int correction_turns = 0;
  int reflections = 0;
  int terminate_checks = 0;
  int routing_calls = 0;
  int injected_faults = 0;

  int backend_calls() const noexcept {
    return model_turns + reflections + terminate_checks + routing_calls;
  }
  friend bool operator==(const RunCounts&, const RunCounts&) = default;
};

struct UsageTotals {
  TokenTotals tokens;
  double wall_seconds = 0.0;
};

struct RunRecord {
  std::string task_id;
  AgentMode mode = AgentMode::stateflow;
  std::optional<std::string> intent_resolved;
  Ledger transcript;
  std::vector<ExecutedCall> trajectory;
  std::optional<AnswerRecord> final_answer;
  std::vector<std::string> artifacts;  // file names relative to the artifact root
  std::map<std::string, std::string> artifact_contents;
  std::vector<std::string> states_visited;
  std::vector<TurnRecord> turns;
  std::vector<RunEvent> events;
  RunCounts counts;
  RunStatus status = RunStatus::aborted;
  std::string abort_reason;
  UsageTotals usage;
  double cost = 0.0;
  std::vector<std::string> diagnostics;

  std::vector<ToolCall> executed_calls() const;
};

/// Summary form written to `{task_id}.run.json` (everything but the transcript
/// and the artifact bodies).
Json to_json(const RunRecord& run);
RunRecord run_from_json(const Json& j);

/// The SELF-REFLECT user message for a failed call.
std::string reflection_prompt(const ToolCall& call, const ToolResult& result,
                              const ToolDefinition* definition);

/// Executes one task. Backend failures end the run with status aborted; tool
/// failures are data.
RunRecord run_task(const TaskSpec& task, const WorkflowSpec& wf, ChatBackend& backend,
                   Session& session, const AgentConfig& cfg);

}  // namespace geoflow
