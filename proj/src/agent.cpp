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

#include "geoflow/agent.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace geoflow {

std::string_view to_string(AgentMode mode) noexcept {
  switch (mode) {
    case AgentMode::stateflow: return "stateflow";
    case AgentMode::react: return "react";
    case AgentMode::react_errtrm: return "react-errtrm";
  }
  return "stateflow";
}

AgentMode agent_mode_from_string(std::string_view text) {
  if (text == "stateflow") return AgentMode::stateflow;
  if (text == "react") return AgentMode::react;
  if (text == "react-errtrm" || text == "react_errtrm") return AgentMode::react_errtrm;
  throw Error("unknown agent mode '" + std::string(text) +
              "' (expected stateflow, react or react-errtrm)");
}

AgentConfig AgentConfig::for_mode(AgentMode mode) {
  AgentConfig c;
  c.mode = mode;
  return c.normalized();
}

AgentConfig AgentConfig::normalized() const {
  AgentConfig c = *this;
  switch (mode) {
    case AgentMode::stateflow:
      c.tool_gating = true;
      break;
    case AgentMode::react:
      c.tool_gating = false;
      c.error_state_enabled = false;
      c.terminate_validation = false;
      break;
    case AgentMode::react_errtrm:
      c.tool_gating = false;
      c.error_state_enabled = true;
      c.terminate_validation = true;
      break;
  }
  return c;
}

std::string_view to_string(RunStatus status) noexcept {
  switch (status) {
    case RunStatus::completed: return "completed";
    case RunStatus::max_turns_exhausted: return "max_turns_exhausted";
    case RunStatus::aborted: return "aborted";
  }
  return "aborted";
}

RunStatus run_status_from_string(std::string_view text) {
  if (text == "completed") return RunStatus::completed;
  if (text == "max_turns_exhausted") return RunStatus::max_turns_exhausted;
  if (text == "aborted") return RunStatus::aborted;
  throw Error("unknown run status '" + std::string(text) + "'");
}

std::vector<ToolCall> RunRecord::executed_calls() const {
  std::vector<ToolCall> calls;
  calls.reserve(trajectory.size());
  for (const auto& e : trajectory) calls.push_back(e.call);
  return calls;
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kReactPreamble =
    "You are a geospatial analysis agent working in an Earth-observation sandbox. "
    "Solve the user's request by calling the available tools. Tools return handles "
    "(h1, h2, ...) that later tools take as input. Report the result with final_answer. "
    "When the task is finished, append the keyword TERMINATE to your reply.";

std::string render_call(const ToolCall& call) {
  return call.name + "(" + call.arguments.dump() + ")";
}

std::string stateflow_system_prompt(const WorkflowSpec& wf) {
  std::ostringstream out;
  out << wf.preamble << "\n\nWorkflow states:\n";
  for (const auto& s : wf.states) {
    out << "- " << s.name;
    if (s.is_terminal) out << " (terminal)";
    if (s.is_error) out << " (error handling)";
    auto it = wf.transitions.find(s.name);
    if (it != wf.transitions.end() && !it->second.empty()) {
      out << " -> ";
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        out << (i ? ", " : "") << it->second[i];
      }
    }
    out << "\n";
  }
  out << "\nEnd every reply with a line `CURRENT_STAGE = <state>` naming the state you move to. "
         "When the task is complete, call final_answer, move to the terminal state and append "
         "the keyword TERMINATE.";
  return out.str();
}

std::string routing_prompt(const WorkflowSpec& wf, bool reminder) {
  std::ostringstream out;
  if (reminder) {
    out << "Your previous reply did not name a valid intent. ";
  }
  out << "Classify the request above. Reply with one line `USER_INTENT = <intent>` where "
         "<intent> is one of: ";
  for (std::size_t i = 0; i < wf.intent_routes.size(); ++i) {
    out << (i ? ", " : "") << wf.intent_routes[i].intent;
  }
  out << ".";
  return out.str();
}

std::string state_instruction(const WorkflowSpec& wf, const StateSpec& state,
                              const std::vector<ToolDefinition>& tools, bool reminder) {
  std::ostringstream out;
  out << "Current state: " << state.name << "\n" << state.instructions << "\n";
  out << "Tools available in this state: ";
  for (std::size_t i = 0; i < tools.size(); ++i) out << (i ? ", " : "") << tools[i].name;
  out << "\n";
  auto it = wf.transitions.find(state.name);
  if (it != wf.transitions.end()) {
    out << "Allowed next states: " << state.name;
    for (const auto& s : it->second) out << ", " << s;
    out << "\n";
  }
  for (const auto& fs : state.few_shot) {
    out << "Example request: " << fs.user << "\nExample reply: " << fs.assistant;
    for (const auto& c : fs.tool_calls) out << "\n  call " << render_call(c);
    out << "\n";
  }
  if (reminder) {
    out << "Reminder: your last reply did not state its stage. End your reply with "
           "`CURRENT_STAGE = <state>`.\n";
  }
  return out.str();
}

constexpr std::string_view kConfirmPrompt =
    "You appended TERMINATE. Before the run ends, summarize what has been produced so far and "
    "check it against the request. If the task is fully complete, reply with the summary followed "
    "by TERMINATE. Otherwise explain what is missing and continue without TERMINATE.";

bool name_in(const std::vector<ToolDefinition>& tools, std::string_view name) {
  return std::any_of(tools.begin(), tools.end(),
                     [&](const ToolDefinition& d) { return d.name == name; });
}

std::string tool_names(const std::vector<ToolDefinition>& tools) {
  std::string s;
  for (const auto& d : tools) {
    if (!s.empty()) s += ", ";
    s += d.name;
  }
  return s;
}

}  // namespace

std::string reflection_prompt(const ToolCall& call, const ToolResult& result,
                              const ToolDefinition* definition) {
  std::ostringstream out;
  out << "SELF-REFLECT: the last function call failed. Reflect on the cause, for example a "
         "misspelled argument, a wrong value format or a transient failure, and reply with the "
         "corrected call or calls to run next. Re-issue any calls that did not run.\n\n";
  out << "Last function call:\n" << to_json(call).dump() << "\n\n";
  out << "Execution result (" << (result.ok() ? "ok" : "error") << "):\n" << result.payload << "\n\n";
  out << "Tool definition:\n";
  if (definition) {
    Json def = Json::object();
    def["name"] = definition->name;
    def["description"] = definition->description;
    def["parameters"] = definition->parameters_schema();
    out << def.dump();
  } else {
    out << "(no tool named '" << call.name << "' exists)";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// The loop
// ---------------------------------------------------------------------------

namespace {

class Runner {
 public:
  Runner(const TaskSpec& task, const WorkflowSpec& wf, ChatBackend& backend, Session& session,
         const AgentConfig& cfg)
      : task_(task), wf_(wf), backend_(backend), session_(session), cfg_(cfg.normalized()) {
    stateful_ = cfg_.mode == AgentMode::stateflow;
  }

  RunRecord run();

 private:
  struct Failure {
    ToolCall call;
    ToolResult result;
  };

  std::vector<ChatMessage> view() const;
  std::vector<ToolDefinition> offered_tools() const;
  void route();
  /// Executes calls against the sandbox with gating and error stop. Returns
  /// the first failure, if any.
  std::optional<Failure> execute(const std::vector<ToolCall>& calls, TurnRecord& turn,
                                 bool correction);
  void reflect(const Failure& failure, TurnRecord& turn);
  bool confirm_terminate(TurnRecord& turn);
  std::vector<ToolCall> normalize_ids(std::vector<ToolCall> calls);
  void finish(RunStatus status, std::string reason = {});
  void visit(const std::string& state);
  void add_usage(const std::optional<UsageRecord>& usage);

  const TaskSpec& task_;
  const WorkflowSpec& wf_;
  ChatBackend& backend_;
  Session& session_;
  AgentConfig cfg_;
  bool stateful_ = false;

  RunRecord rec_;
  std::string state_;
  std::set<std::size_t> hidden_;  // ledger indices excluded from later views
  std::vector<ToolCall> pending_corrections_;
  int next_call_ = 1;
  int reminders_used_ = 0;
  bool reminder_pending_ = false;
  bool done_ = false;
};

std::vector<ChatMessage> Runner::view() const {
  std::vector<ChatMessage> out;
  const auto& msgs = rec_.transcript.messages();
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    if (!hidden_.count(i)) out.push_back(msgs[i]);
  }
  return out;
}

std::vector<ToolDefinition> Runner::offered_tools() const {
  if (stateful_ && cfg_.tool_gating) return tools_for_state(wf_, state_, sandbox_registry());
  return sandbox_registry().definitions();
}

void Runner::visit(const std::string& state) {
  if (rec_.states_visited.empty() || rec_.states_visited.back() != state) {
    rec_.states_visited.push_back(state);
  }
}

void Runner::add_usage(const std::optional<UsageRecord>& usage) {
  if (usage) rec_.usage.wall_seconds += usage->wall_seconds;
}

std::vector<ToolCall> Runner::normalize_ids(std::vector<ToolCall> calls) {
  for (auto& c : calls) c.call_id = "call_" + std::to_string(next_call_++);
  return calls;
}

void Runner::finish(RunStatus status, std::string reason) {
  rec_.status = status;
  rec_.abort_reason = std::move(reason);
  done_ = true;
}

void Runner::route() {
  const auto& msgs = rec_.transcript.messages();
  std::vector<ChatMessage> base{msgs[0], msgs[1]};
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::size_t prompt_at = rec_.transcript.size();
    rec_.transcript.push(Role::user, routing_prompt(wf_, attempt > 0));
    std::vector<ChatMessage> request = base;
    request.push_back(rec_.transcript.messages().back());
    rec_.events.push_back({"route", 0});
    ++rec_.counts.routing_calls;
    ChatExchange ex;
    try {
      ex = backend_.complete(request, {}, CallPurpose::route);
    } catch (const BackendError& e) {
      rec_.diagnostics.push_back(std::string("routing call failed: ") + e.what());
      hidden_.insert(prompt_at);
      continue;
    }
    rec_.transcript.push_assistant(ex.assistant_text, {}, ex.usage);
    add_usage(ex.usage);
    hidden_.insert(prompt_at);
    hidden_.insert(prompt_at + 1);
    if (auto tag = parse_intent(ex.assistant_text)) {
      for (const auto& r : wf_.intent_routes) {
        if (casefold(r.intent) == casefold(tag->value)) {
          rec_.intent_resolved = r.intent;
          state_ = r.entry_state;
          return;
        }
      }
      rec_.diagnostics.push_back("routing reply named unknown intent '" + tag->value + "'");
    } else {
      rec_.diagnostics.push_back("routing reply carried no USER_INTENT tag");
    }
  }
  const IntentRoute* fallback = wf_.find_route(wf_.default_intent);
  if (!fallback) fallback = &wf_.intent_routes.front();
  rec_.intent_resolved = fallback->intent;
  state_ = fallback->entry_state;
  rec_.diagnostics.push_back("routing fell back to default intent " + fallback->intent);
}

std::optional<Runner::Failure> Runner::execute(const std::vector<ToolCall>& calls,
                                               TurnRecord& turn, bool correction) {
  const std::vector<ToolDefinition> allowed = offered_tools();
  std::optional<Failure> failure;
  for (const auto& call : calls) {
    if (failure && cfg_.error_state_enabled) {
      rec_.transcript.push_tool(call.call_id,
                                "NotExecuted: skipped because an earlier call in this turn failed");
      continue;
    }
    if (stateful_ && cfg_.tool_gating && !name_in(allowed, call.name)) {
      ToolResult r{call.call_id, ToolStatus::error,
                   "ToolNotAvailable: tool '" + call.name + "' is not available in state " +
                       state_ + " (available: " + tool_names(allowed) + ")"};
      rec_.transcript.push_tool(call.call_id, r.payload);
      turn.rejected.push_back({call, r.payload});
      if (!failure) failure = Failure{call, r};
      continue;
    }
    ToolOutcome out = session_.execute(call);
    rec_.transcript.push_tool(call.call_id, out.result.payload);
    rec_.trajectory.push_back({call, out.result, out.injected_fault, turn.turn_index,
                               turn.state_before, correction});
    turn.executed.push_back(call.call_id);
    if (out.injected_fault) ++rec_.counts.injected_faults;
    if (!out.result.ok() && !failure) failure = Failure{call, out.result};
  }
  return failure;
}

void Runner::reflect(const Failure& failure, TurnRecord& turn) {
  turn.reflected = true;
  if (const StateSpec* err = wf_.error_state(); stateful_ && err) visit(err->name);
  ++rec_.counts.reflections;
  rec_.events.push_back({"reflect", turn.turn_index});

  std::string prompt = reflection_prompt(failure.call, failure.result,
                                         sandbox_registry().find(failure.call.name));
  if (const StateSpec* err = wf_.error_state(); stateful_ && err && !err->instructions.empty()) {
    prompt = err->instructions + "\n\n" + prompt;
  }
  const auto& msgs = rec_.transcript.messages();
  std::vector<ChatMessage> request{msgs[0], msgs[1]};
  rec_.transcript.push(Role::user, std::move(prompt));
  request.push_back(rec_.transcript.messages().back());

  ChatExchange ex;
  try {
    ex = backend_.complete(request, offered_tools(), CallPurpose::reflect);
  } catch (const BackendError& e) {
    turn.diagnostics.push_back(std::string("reflection call failed: ") + e.what());
    return;
  }
  std::vector<ToolCall> calls = normalize_ids(std::move(ex.tool_calls));
  rec_.transcript.push_assistant(ex.assistant_text, calls, ex.usage);
  add_usage(ex.usage);
  pending_corrections_ = std::move(calls);
}

bool Runner::confirm_terminate(TurnRecord& turn) {
  ++rec_.counts.terminate_checks;
  rec_.events.push_back({"confirm", turn.turn_index});
  std::vector<ChatMessage> request = view();
  rec_.transcript.push(Role::user, std::string(kConfirmPrompt));
  request.push_back(rec_.transcript.messages().back());
  ChatExchange ex;
  try {
    ex = backend_.complete(request, {}, CallPurpose::confirm);
  } catch (const BackendError& e) {
    turn.diagnostics.push_back(std::string("termination check failed, resuming: ") + e.what());
    return false;
  }
  rec_.transcript.push_assistant(ex.assistant_text, {}, ex.usage);
  add_usage(ex.usage);
  return contains_terminate(ex.assistant_text);
}

RunRecord Runner::run() {
  rec_.task_id = task_.task_id;
  rec_.mode = cfg_.mode;
  rec_.transcript.push(Role::system,
                       stateful_ ? stateflow_system_prompt(wf_) : std::string(kReactPreamble));
  rec_.transcript.push(Role::user, task_.query);

  if (stateful_) {
    state_ = wf_.initial;
    if (!wf_.intent_routes.empty()) route();
    visit(state_);
  }

  for (int t = 0; t < cfg_.max_turns && !done_; ++t) {
    TurnRecord turn;
    turn.turn_index = t;
    turn.state_before = state_;

    if (!pending_corrections_.empty()) {
      // Corrections proposed by the last reflection run without a model call,
      // gated by the state the error occurred in.
      turn.kind = TurnKind::correction;
      ++rec_.counts.correction_turns;
      rec_.events.push_back({"correction", t});
      std::vector<ToolCall> calls = std::move(pending_corrections_);
      pending_corrections_.clear();
      if (auto failure = execute(calls, turn, true); failure && cfg_.error_state_enabled) {
        reflect(*failure, turn);
      }
      turn.state_after = state_;
      rec_.turns.push_back(std::move(turn));
      continue;
    }

    std::vector<ChatMessage> request = view();
    const std::vector<ToolDefinition> tools = offered_tools();
    if (stateful_) {
      const StateSpec* spec = wf_.find_state(state_);
      rec_.transcript.push(Role::user, state_instruction(wf_, *spec, tools, reminder_pending_));
      hidden_.insert(rec_.transcript.size() - 1);
      request.push_back(rec_.transcript.messages().back());
      reminder_pending_ = false;
    }

    ++rec_.counts.model_turns;
    rec_.events.push_back({"turn", t});
    ChatExchange ex;
    try {
      ex = backend_.complete(request, tools, CallPurpose::turn);
    } catch (const BackendError& e) {
      turn.diagnostics.push_back(e.what());
      turn.state_after = state_;
      rec_.turns.push_back(std::move(turn));
      finish(RunStatus::aborted, std::string("backend failure: ") + e.what());
      break;
    }
    for (auto& d : ex.diagnostics) turn.diagnostics.push_back(d);
    std::vector<ToolCall> calls = normalize_ids(std::move(ex.tool_calls));
    rec_.transcript.push_assistant(ex.assistant_text, calls, ex.usage);
    add_usage(ex.usage);
    turn.assistant_text = ex.assistant_text;
    turn.usage = ex.usage;

    auto failure = execute(calls, turn, false);
    if (failure && cfg_.error_state_enabled) {
      // The failing turn's stage tag and TERMINATE are void; the run resumes
      // in the pre-error state once the reflection's corrections have run.
      reflect(*failure, turn);
      if (stateful_) visit(state_);
      turn.state_after = state_;
      rec_.turns.push_back(std::move(turn));
      continue;
    }

    const std::string state_before = state_;
    if (stateful_) {
      if (auto tag = parse_stage(ex.assistant_text)) {
        TransitionDecision d = validate_transition(wf_, state_, tag->value, cfg_.transition_mode);
        if (d.kind == TransitionDecision::Kind::reject) {
          turn.diagnostics.push_back(d.reason);
          turn.state_after = state_;
          rec_.turns.push_back(std::move(turn));
          finish(RunStatus::aborted, "rejected transition: " + d.reason);
          break;
        }
        const StateSpec* target = wf_.find_state(d.state);
        if (d.accepted() && target && target->is_error) {
          turn.diagnostics.push_back("model proposed the error state; staying in " + state_);
        } else {
          if (!d.accepted()) turn.diagnostics.push_back(d.reason);
          state_ = d.state;
        }
      } else {
        turn.diagnostics.push_back("reply carried no CURRENT_STAGE tag");
        if (reminders_used_ < cfg_.reminder_cap) {
          ++reminders_used_;
          reminder_pending_ = true;
        }
      }
      visit(state_);
    }

    const StateSpec* now = stateful_ ? wf_.find_state(state_) : nullptr;
    const bool terminal = now && now->is_terminal;
    if (contains_terminate(ex.assistant_text)) {
      turn.terminate_seen = true;
      bool confirmed = true;
      if (cfg_.terminate_validation) {
        confirmed = confirm_terminate(turn);
        turn.terminate_confirmed = confirmed;
      }
      if (confirmed) {
        turn.state_after = state_;
        rec_.turns.push_back(std::move(turn));
        if (session_.answer() || terminal) {
          finish(RunStatus::completed);
        } else {
          finish(RunStatus::aborted, "terminated without an answer or terminal state");
        }
        break;
      }
      if (terminal) {
        state_ = state_before;
        visit(state_);
        turn.diagnostics.push_back("termination rejected; returning to " + state_);
      }
    } else if (terminal) {
      turn.state_after = state_;
      rec_.turns.push_back(std::move(turn));
      finish(RunStatus::completed);
      break;
    }
    turn.state_after = state_;
    rec_.turns.push_back(std::move(turn));
  }

  if (!done_) finish(RunStatus::max_turns_exhausted, "turn limit reached");
  rec_.final_answer = session_.answer();
  rec_.artifacts = session_.artifacts();
  rec_.artifact_contents = session_.artifact_contents();
  rec_.usage.tokens = token_totals(rec_.transcript);
  return std::move(rec_);
}

}  // namespace

RunRecord run_task(const TaskSpec& task, const WorkflowSpec& wf, ChatBackend& backend,
                   Session& session, const AgentConfig& cfg) {
  Runner runner(task, wf, backend, session, cfg);
  return runner.run();
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

Json usage_or_null(const std::optional<UsageRecord>& u) { return u ? to_json(*u) : Json(nullptr); }

Json strings(const std::vector<std::string>& v) {
  Json j = Json::array();
  for (const auto& s : v) j.push_back(s);
  return j;
}

std::vector<std::string> strings_from(const Json& j) {
  std::vector<std::string> v;
  for (const auto& s : j) v.push_back(s.get<std::string>());
  return v;
}

}  // namespace

Json to_json(const RunRecord& run) {
  Json j = Json::object();
  j["task_id"] = run.task_id;
  j["mode"] = to_string(run.mode);
  j["intent_resolved"] = run.intent_resolved ? Json(*run.intent_resolved) : Json(nullptr);
  j["status"] = to_string(run.status);
  j["abort_reason"] = run.abort_reason;
  j["states_visited"] = strings(run.states_visited);

  Json traj = Json::array();
  for (const auto& e : run.trajectory) {
    Json t = Json::object();
    t["call"] = to_json(e.call);
    t["status"] = e.result.ok() ? "ok" : "error";
    t["payload"] = e.result.payload;
    t["injected_fault"] = e.injected_fault;
    t["turn"] = e.turn;
    t["state_before"] = e.state_before;
    t["correction"] = e.correction;
    traj.push_back(std::move(t));
  }
  j["trajectory"] = std::move(traj);
  j["final_answer"] = run.final_answer ? to_json(*run.final_answer) : Json(nullptr);
  j["artifacts"] = strings(run.artifacts);

  Json turns = Json::array();
  for (const auto& t : run.turns) {
    Json tj = Json::object();
    tj["turn_index"] = t.turn_index;
    tj["kind"] = t.kind == TurnKind::model ? "model" : "correction";
    tj["state_before"] = t.state_before;
    tj["state_after"] = t.state_after;
    tj["assistant_text"] = t.assistant_text;
    tj["executed"] = strings(t.executed);
    Json rej = Json::array();
    for (const auto& r : t.rejected) {
      Json rj = Json::object();
      rj["call"] = to_json(r.call);
      rj["reason"] = r.reason;
      rej.push_back(std::move(rj));
    }
    tj["rejected"] = std::move(rej);
    tj["reflected"] = t.reflected;
    tj["terminate_seen"] = t.terminate_seen;
    tj["terminate_confirmed"] =
        t.terminate_confirmed ? Json(*t.terminate_confirmed) : Json(nullptr);
    tj["usage"] = usage_or_null(t.usage);
    tj["diagnostics"] = strings(t.diagnostics);
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);

  Json events = Json::array();
  for (const auto& e : run.events) {
    Json ej = Json::object();
    ej["kind"] = e.kind;
    ej["turn"] = e.turn;
    events.push_back(std::move(ej));
  }
  j["events"] = std::move(events);

  Json counts = Json::object();
  counts["model_turns"] = run.counts.model_turns;
  counts["correction_turns"] = run.counts.correction_turns;
  counts["reflections"] = run.counts.reflections;
  counts["terminate_checks"] = run.counts.terminate_checks;
  counts["routing_calls"] = run.counts.routing_calls;
  counts["injected_faults"] = run.counts.injected_faults;
  counts["backend_calls"] = run.counts.backend_calls();
  j["counts"] = std::move(counts);

  Json usage = Json::object();
  usage["input_tokens"] = run.usage.tokens.input_tokens;
  usage["cached_tokens"] = run.usage.tokens.cached_tokens;
  usage["output_tokens"] = run.usage.tokens.output_tokens;
  usage["estimated"] = run.usage.tokens.estimated;
  usage["wall_seconds"] = run.usage.wall_seconds;
  j["usage"] = std::move(usage);
  j["cost"] = run.cost;
  j["diagnostics"] = strings(run.diagnostics);
  return j;
}

RunRecord run_from_json(const Json& j) {
  RunRecord r;
  try {
    r.task_id = j.at("task_id").get<std::string>();
    r.mode = agent_mode_from_string(j.at("mode").get<std::string>());
    if (j.at("intent_resolved").is_string()) {
      r.intent_resolved = j.at("intent_resolved").get<std::string>();
    }
    r.status = run_status_from_string(j.at("status").get<std::string>());
    r.abort_reason = j.value("abort_reason", std::string{});
    r.states_visited = strings_from(j.at("states_visited"));
    for (const auto& t : j.at("trajectory")) {
      ExecutedCall e;
      e.call = tool_call_from_json(t.at("call"));
      e.result.call_id = e.call.call_id;
      e.result.status = t.at("status").get<std::string>() == "ok" ? ToolStatus::ok : ToolStatus::error;
      e.result.payload = t.at("payload").get<std::string>();
      e.injected_fault = t.at("injected_fault").get<bool>();
      e.turn = t.at("turn").get<int>();
      e.state_before = t.at("state_before").get<std::string>();
      e.correction = t.value("correction", false);
      r.trajectory.push_back(std::move(e));
    }
    if (!j.at("final_answer").is_null()) r.final_answer = answer_from_json(j.at("final_answer"));
    r.artifacts = strings_from(j.at("artifacts"));
    for (const auto& tj : j.at("turns")) {
      TurnRecord t;
      t.turn_index = tj.at("turn_index").get<int>();
      t.kind = tj.at("kind").get<std::string>() == "model" ? TurnKind::model : TurnKind::correction;
      t.state_before = tj.at("state_before").get<std::string>();
      t.state_after = tj.at("state_after").get<std::string>();
      t.assistant_text = tj.at("assistant_text").get<std::string>();
      t.executed = strings_from(tj.at("executed"));
      for (const auto& rj : tj.at("rejected")) {
        t.rejected.push_back({tool_call_from_json(rj.at("call")), rj.at("reason").get<std::string>()});
      }
      t.reflected = tj.at("reflected").get<bool>();
      t.terminate_seen = tj.at("terminate_seen").get<bool>();
      if (!tj.at("terminate_confirmed").is_null()) {
        t.terminate_confirmed = tj.at("terminate_confirmed").get<bool>();
      }
      if (!tj.at("usage").is_null()) t.usage = usage_from_json(tj.at("usage"));
      t.diagnostics = strings_from(tj.at("diagnostics"));
      r.turns.push_back(std::move(t));
    }
    for (const auto& ej : j.at("events")) {
      r.events.push_back({ej.at("kind").get<std::string>(), ej.at("turn").get<int>()});
    }
    const Json& c = j.at("counts");
    r.counts.model_turns = c.at("model_turns").get<int>();
    r.counts.correction_turns = c.at("correction_turns").get<int>();
    r.counts.reflections = c.at("reflections").get<int>();
    r.counts.terminate_checks = c.at("terminate_checks").get<int>();
    r.counts.routing_calls = c.at("routing_calls").get<int>();
    r.counts.injected_faults = c.at("injected_faults").get<int>();
    const Json& u = j.at("usage");
    r.usage.tokens.input_tokens = u.at("input_tokens").get<std::int64_t>();
    r.usage.tokens.cached_tokens = u.at("cached_tokens").get<std::int64_t>();
    r.usage.tokens.output_tokens = u.at("output_tokens").get<std::int64_t>();
    r.usage.tokens.estimated = u.at("estimated").get<bool>();
    r.usage.wall_seconds = u.at("wall_seconds").get<double>();
    r.cost = j.at("cost").get<double>();
    r.diagnostics = strings_from(j.at("diagnostics"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed run record: ") + e.what());
  }
  return r;
}

}  // namespace geoflow
