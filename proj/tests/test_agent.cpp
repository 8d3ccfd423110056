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

#include <algorithm>

#include "geoflow/agent.hpp"
#include "geoflow/eval.hpp"
#include "geoflow/taskgen.hpp"
#include "support.hpp"

namespace geoflow {
namespace {

using geoflow::testing::data_file;

const World& world() {
  static const World w = generate_catalog(CatalogParams{});
  return w;
}

const WorkflowSpec& multi() {
  static const WorkflowSpec wf =
      load_workflow_file(data_file("workflows/eo_multi.flow"), sandbox_registry());
  return wf;
}

const std::vector<TaskSpec>& tasks() {
  static const std::vector<TaskSpec> t = generate_tasks(
      world(), CatalogParams{}, load_templates(data_file("templates/eo_default.json")), {});
  return t;
}

const TaskSpec& task_of(const std::string& template_id) {
  for (const auto& t : tasks()) {
    if (t.template_id == template_id) return t;
  }
  throw std::runtime_error("no task for " + template_id);
}

/// Wraps a replay backend and keeps every request it saw.
class Recorder final : public ChatBackend {
 public:
  struct Request {
    std::vector<ChatMessage> messages;
    std::vector<std::string> tools;
    CallPurpose purpose;
  };

  explicit Recorder(ReplayScript script) : inner_(std::move(script)) {}

  ChatExchange complete(const std::vector<ChatMessage>& messages,
                        const std::vector<ToolDefinition>& tools, CallPurpose purpose) override {
    Request r{messages, {}, purpose};
    for (const auto& d : tools) r.tools.push_back(d.name);
    requests.push_back(std::move(r));
    return inner_.complete(messages, tools, purpose);
  }

  std::vector<Request> requests;

 private:
  ReplayBackend inner_;
};

struct Outcome {
  RunRecord run;
  std::vector<Recorder::Request> requests;
};

Outcome run(const TaskSpec& task, ReplayScript script, AgentConfig cfg = {},
            std::optional<FaultPlan> faults = std::nullopt) {
  script.task_id = task.task_id;
  Recorder backend(std::move(script));
  SessionOptions so;
  so.task_id = task.task_id;
  so.faults = faults;
  Session session(world(), so);
  Outcome o{run_task(task, multi(), backend, session, cfg), {}};
  o.requests = backend.requests;
  return o;
}

ReplayEntry entry(CallPurpose channel, std::string text, std::vector<ToolCall> calls = {}) {
  ReplayEntry e;
  e.channel = channel;
  e.assistant_text = std::move(text);
  e.tool_calls = std::move(calls);
  return e;
}

ToolCall call(std::string name, Json args) { return {"", std::move(name), std::move(args)}; }

/// Index of the first turn-channel entry issuing a call named `tool`.
std::size_t turn_with(const ReplayScript& s, const std::string& tool) {
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    const auto& e = s.entries[i];
    if (e.channel != CallPurpose::turn) continue;
    for (const auto& c : e.tool_calls) {
      if (c.name == tool) return i;
    }
  }
  throw std::runtime_error("no turn issues " + tool);
}

std::size_t count_events(const RunRecord& r, const std::string& kind) {
  return static_cast<std::size_t>(std::count_if(r.events.begin(), r.events.end(),
                                                [&](const RunEvent& e) { return e.kind == kind; }));
}

TEST(AgentConfig, ModesForceTheirFlags) {
  const AgentConfig s = AgentConfig::for_mode(AgentMode::stateflow);
  EXPECT_TRUE(s.tool_gating);
  EXPECT_TRUE(s.error_state_enabled);
  EXPECT_TRUE(s.terminate_validation);
  EXPECT_EQ(s.max_turns, 25);
  const AgentConfig r = AgentConfig::for_mode(AgentMode::react);
  EXPECT_FALSE(r.tool_gating);
  EXPECT_FALSE(r.error_state_enabled);
  EXPECT_FALSE(r.terminate_validation);
  const AgentConfig e = AgentConfig::for_mode(AgentMode::react_errtrm);
  EXPECT_FALSE(e.tool_gating);
  EXPECT_TRUE(e.error_state_enabled);
  EXPECT_TRUE(e.terminate_validation);
  EXPECT_EQ(agent_mode_from_string("react-errtrm"), AgentMode::react_errtrm);
  EXPECT_EQ(agent_mode_from_string("react_errtrm"), AgentMode::react_errtrm);
  EXPECT_THROW(agent_mode_from_string("reflex"), Error);
}

TEST(Run, GoldScriptCompletesOnTheGoldTrajectory) {
  const TaskSpec& task = task_of("vessel_detect_map");
  const Outcome o = run(task, build_replay_script(task, multi()));
  EXPECT_EQ(o.run.status, RunStatus::completed) << o.run.abort_reason;
  EXPECT_EQ(o.run.intent_resolved, "Vision");
  EXPECT_DOUBLE_EQ(match_trajectory(task.gold_trajectory, o.run.executed_calls()).correctness, 1.0);
  EXPECT_TRUE(success_check(task, o.run));
  EXPECT_EQ(o.run.counts.reflections, 0);
  EXPECT_EQ(o.run.counts.terminate_checks, 1);
  EXPECT_EQ(o.run.counts.routing_calls, 1);
  EXPECT_EQ(o.run.states_visited.back(), "End");
  EXPECT_EQ(static_cast<std::size_t>(o.run.counts.backend_calls()), o.requests.size());
}

TEST(Run, EveryGeneratedTaskSucceedsOnItsGoldScript) {
  for (const auto& task : tasks()) {
    const Outcome o = run(task, build_replay_script(task, multi()));
    EXPECT_EQ(o.run.status, RunStatus::completed) << task.task_id << ": " << o.run.abort_reason;
    EXPECT_TRUE(success_check(task, o.run)) << task.task_id;
  }
}

TEST(Run, SecondRunIsIdentical) {
  const TaskSpec& task = task_of("object_count");
  const Outcome a = run(task, build_replay_script(task, multi()));
  const Outcome b = run(task, build_replay_script(task, multi()));
  EXPECT_EQ(to_json(a.run).dump(), to_json(b.run).dump());
  EXPECT_EQ(a.run.transcript.to_jsonl(), b.run.transcript.to_jsonl());
}

TEST(Run, RecordSurvivesJsonRoundTrip) {
  const TaskSpec& task = task_of("forest_loss");
  const Outcome o = run(task, build_replay_script(task, multi()));
  EXPECT_EQ(to_json(run_from_json(to_json(o.run))).dump(), to_json(o.run).dump());
}

TEST(Run, NeverTerminatingScriptStopsAtTheTurnLimit) {
  const TaskSpec& task = task_of("vessel_detect_map");
  ReplayScript s;
  s.entries.push_back(entry(CallPurpose::route, "USER_INTENT = Vision"));
  for (int i = 0; i < 30; ++i) {
    s.entries.push_back(entry(CallPurpose::turn, "Still looking.\nCURRENT_STAGE = Load"));
  }
  const Outcome o = run(task, s);
  EXPECT_EQ(o.run.status, RunStatus::max_turns_exhausted);
  EXPECT_EQ(o.run.counts.model_turns, 25);
  EXPECT_EQ(o.run.turns.size(), 25u);
}

TEST(Run, ExhaustedScriptAbortsTheRun) {
  const TaskSpec& task = task_of("vessel_detect_map");
  ReplayScript s;
  s.entries.push_back(entry(CallPurpose::route, "USER_INTENT = Vision"));
  const Outcome o = run(task, s);
  EXPECT_EQ(o.run.status, RunStatus::aborted);
  EXPECT_FALSE(o.run.abort_reason.empty());
}

TEST(Run, CallIdsAreNormalized) {
  const TaskSpec& task = task_of("vessel_detect_map");
  const Outcome o = run(task, build_replay_script(task, multi()));
  for (std::size_t i = 0; i < o.run.trajectory.size(); ++i) {
    EXPECT_EQ(o.run.trajectory[i].call.call_id, "call_" + std::to_string(i + 1));
  }
}

// ---------------------------------------------------------------------------
// Error handling
// ---------------------------------------------------------------------------

/// A seed whose plan faults the first filter_temporal attempt (call index 1)
/// and lets the retry (call index 2) through.
FaultPlan single_fault_plan(const std::string& task_id) {
  FaultPlan plan;
  plan.fault_rate = 0.5;
  plan.scope = {"filter_temporal"};
  for (std::uint64_t seed = 0;; ++seed) {
    plan.seed = seed;
    if (next_fault(plan, task_id, 1) && !next_fault(plan, task_id, 2)) return plan;
  }
}

TEST(ErrorHandling, TransientFaultIsReflectedOnceAndRetried) {
  const TaskSpec& task = task_of("vessel_detect_map");
  const FaultPlan plan = single_fault_plan(task.task_id);
  ScriptOptions so;
  so.faults = plan;
  const Outcome o = run(task, build_replay_script(task, multi(), so), {}, plan);
  EXPECT_EQ(o.run.status, RunStatus::completed) << o.run.abort_reason;
  EXPECT_EQ(o.run.counts.injected_faults, 1);
  EXPECT_EQ(o.run.counts.reflections, 1);
  EXPECT_EQ(o.run.counts.correction_turns, 1);
  EXPECT_TRUE(success_check(task, o.run));

  const auto& traj = o.run.trajectory;
  ASSERT_GE(traj.size(), 3u);
  EXPECT_EQ(traj[1].call.name, "filter_temporal");
  EXPECT_TRUE(traj[1].injected_fault);
  EXPECT_FALSE(traj[1].result.ok());
  EXPECT_EQ(traj[2].call.name, "filter_temporal");
  EXPECT_TRUE(traj[2].correction);
  EXPECT_TRUE(traj[2].result.ok());

  // The reflection request stands alone: system, query, reflection prompt.
  const auto it = std::find_if(o.requests.begin(), o.requests.end(),
                               [](const auto& r) { return r.purpose == CallPurpose::reflect; });
  ASSERT_NE(it, o.requests.end());
  ASSERT_EQ(it->messages.size(), 3u);
  EXPECT_EQ(it->messages[0].role, Role::system);
  EXPECT_EQ(it->messages[1].content, task.query);
  EXPECT_NE(it->messages[2].content.find("SELF-REFLECT"), std::string::npos);
  EXPECT_NE(it->messages[2].content.find(std::string(kInjectedFaultPayload)), std::string::npos);

  // A reflection is always followed by its correction turn.
  for (std::size_t i = 0; i < o.run.events.size(); ++i) {
    if (o.run.events[i].kind != "reflect") continue;
    ASSERT_LT(i + 1, o.run.events.size());
    EXPECT_EQ(o.run.events[i + 1].kind, "correction");
  }
}

TEST(ErrorHandling, ReactModeNeverReflects) {
  const TaskSpec& task = task_of("vessel_detect_map");
  const FaultPlan plan = single_fault_plan(task.task_id);
  const Outcome o =
      run(task, build_replay_script(task, multi()), AgentConfig::for_mode(AgentMode::react), plan);
  EXPECT_EQ(o.run.counts.injected_faults, 1);
  EXPECT_EQ(o.run.counts.reflections, 0);
  EXPECT_EQ(count_events(o.run, "reflect"), 0u);
  EXPECT_EQ(o.run.counts.terminate_checks, 0);
  EXPECT_FALSE(success_check(task, o.run));
  // The failure reaches the model as an ordinary tool message.
  const auto& msgs = o.run.transcript.messages();
  EXPECT_TRUE(std::any_of(msgs.begin(), msgs.end(), [](const ChatMessage& m) {
    return m.role == Role::tool && m.content.find(kInjectedFaultPayload) != std::string::npos;
  }));
}

TEST(ErrorHandling, MisspelledArgumentIsFixedByReflection) {
  const TaskSpec& task = task_of("vessel_detect_map");
  ReplayScript s = build_replay_script(task, multi());
  const std::size_t at = turn_with(s, "filter_temporal");
  ToolCall& bad = s.entries[at].tool_calls.front();
  ASSERT_EQ(bad.name, "filter_temporal");
  const ToolCall good = bad;
  bad.arguments.erase("start_date");
  bad.arguments["startdate"] = good.arguments["start_date"];
  s.entries.push_back(entry(CallPurpose::reflect, "The parameter is start_date.", {good}));

  const Outcome o = run(task, s);
  EXPECT_EQ(o.run.status, RunStatus::completed) << o.run.abort_reason;
  EXPECT_EQ(o.run.counts.reflections, 1);
  EXPECT_EQ(o.run.counts.injected_faults, 0);
  EXPECT_TRUE(success_check(task, o.run));
  ASSERT_GE(o.run.trajectory.size(), 3u);
  EXPECT_FALSE(o.run.trajectory[1].result.ok());
  EXPECT_NE(o.run.trajectory[1].result.payload.find("startdate"), std::string::npos);
  EXPECT_TRUE(o.run.trajectory[2].result.ok());
  EXPECT_TRUE(o.run.trajectory[2].call.arguments.contains("start_date"));
}

TEST(ErrorHandling, CallsAfterAFailureInTheSameTurnAreSkipped) {
  const TaskSpec& task = task_of("vessel_detect_map");
  ReplayScript s;
  s.entries.push_back(entry(CallPurpose::route, "USER_INTENT = Vision"));
  s.entries.push_back(entry(CallPurpose::turn, "Loading.\nCURRENT_STAGE = Load",
                            {call("load_product", {{"product", "landsat"}}),
                             call("load_product", {{"product", "xview1"}})}));
  s.entries.push_back(entry(CallPurpose::reflect, "Use xview1.",
                            {call("load_product", {{"product", "xview1"}})}));
  AgentConfig cfg;
  cfg.max_turns = 2;
  const Outcome o = run(task, s, cfg);
  ASSERT_GE(o.run.trajectory.size(), 2u);
  EXPECT_FALSE(o.run.trajectory[0].result.ok());
  EXPECT_TRUE(o.run.trajectory[1].correction);
  EXPECT_TRUE(o.run.trajectory[1].result.ok());
  const auto& msgs = o.run.transcript.messages();
  EXPECT_TRUE(std::any_of(msgs.begin(), msgs.end(), [](const ChatMessage& m) {
    return m.role == Role::tool && m.content.find("NotExecuted") != std::string::npos;
  }));
}

// ---------------------------------------------------------------------------
// Termination
// ---------------------------------------------------------------------------

TEST(Termination, RejectedEarlyTerminateKeepsTheRunGoing) {
  const TaskSpec& task = task_of("vessel_detect_map");
  ScriptOptions so;
  so.premature_terminate = true;
  const Outcome o = run(task, build_replay_script(task, multi(), so));
  EXPECT_EQ(o.run.status, RunStatus::completed) << o.run.abort_reason;
  EXPECT_EQ(o.run.counts.terminate_checks, 2);
  EXPECT_TRUE(success_check(task, o.run));
  EXPECT_EQ(o.run.executed_calls().size(), task.gold_trajectory.size());
}

TEST(Termination, WithoutValidationTheRunEndsEarly) {
  const TaskSpec& task = task_of("vessel_detect_map");
  ScriptOptions so;
  so.premature_terminate = true;
  AgentConfig cfg;
  cfg.terminate_validation = false;
  const Outcome o = run(task, build_replay_script(task, multi(), so), cfg);
  EXPECT_EQ(o.run.counts.terminate_checks, 0);
  EXPECT_LT(o.run.executed_calls().size(), task.gold_trajectory.size());
  EXPECT_NE(o.run.status, RunStatus::completed);
  EXPECT_FALSE(success_check(task, o.run));
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

ReplayScript routing_script(std::vector<std::string> replies) {
  ReplayScript s;
  for (auto& r : replies) s.entries.push_back(entry(CallPurpose::route, std::move(r)));
  s.entries.push_back(entry(CallPurpose::turn, "Thinking."));
  return s;
}

AgentConfig one_turn() {
  AgentConfig cfg;
  cfg.max_turns = 1;
  return cfg;
}

TEST(Routing, TagSelectsTheEntryState) {
  const Outcome o = run(task_of("forest_loss"), routing_script({"USER_INTENT = Forest"}), one_turn());
  EXPECT_EQ(o.run.intent_resolved, "Forest");
  EXPECT_EQ(o.run.counts.routing_calls, 1);
  ASSERT_FALSE(o.run.turns.empty());
  EXPECT_EQ(o.run.turns[0].state_before, "ForestAnalysis");
}

TEST(Routing, UnreadableReplyIsRetriedOnce) {
  const Outcome o = run(task_of("urban_builtup"),
                        routing_script({"I think it is about cities.", "USER_INTENT = Urban"}),
                        one_turn());
  EXPECT_EQ(o.run.intent_resolved, "Urban");
  EXPECT_EQ(o.run.counts.routing_calls, 2);
  EXPECT_EQ(o.run.turns.at(0).state_before, "UrbanAnalysis");
}

TEST(Routing, TwoMissesFallBackToTheDefaultIntent) {
  const Outcome o =
      run(task_of("forest_loss"), routing_script({"no idea", "USER_INTENT = Oceans"}), one_turn());
  EXPECT_EQ(o.run.intent_resolved, "Vision");
  EXPECT_EQ(o.run.counts.routing_calls, 2);
  EXPECT_EQ(o.run.turns.at(0).state_before, "Load");
  EXPECT_TRUE(std::any_of(o.run.diagnostics.begin(), o.run.diagnostics.end(),
                          [](const std::string& d) { return d.find("default") != std::string::npos; }));
}

TEST(Routing, RoutingExchangeIsHiddenFromLaterTurns) {
  const Outcome o = run(task_of("forest_loss"), routing_script({"USER_INTENT = Forest"}), one_turn());
  ASSERT_EQ(o.requests.size(), 2u);
  EXPECT_EQ(o.requests[1].purpose, CallPurpose::turn);
  for (const auto& m : o.requests[1].messages) {
    EXPECT_EQ(m.content.find("USER_INTENT"), std::string::npos) << m.content;
  }
}

// ---------------------------------------------------------------------------
// Gating and transitions
// ---------------------------------------------------------------------------

TEST(Gating, OnlyTheStateToolsAreOffered) {
  const TaskSpec& task = task_of("vessel_detect_map");
  const Outcome o = run(task, build_replay_script(task, multi()));
  for (std::size_t i = 0; i < o.run.turns.size(); ++i) {
    const TurnRecord& t = o.run.turns[i];
    if (t.kind != TurnKind::model) continue;
    std::vector<std::string> expected;
    for (const auto& d : tools_for_state(multi(), t.state_before, sandbox_registry())) expected.push_back(d.name);
    const auto req = std::find_if(o.requests.begin(), o.requests.end(), [&, n = std::size_t{0}](
                                      const auto& r) mutable {
      return r.purpose == CallPurpose::turn && n++ == i;
    });
    ASSERT_NE(req, o.requests.end());
    EXPECT_EQ(req->tools, expected) << t.state_before;
  }
  for (const auto& e : o.run.trajectory) {
    const auto allowed = tools_for_state(multi(), e.state_before, sandbox_registry());
    EXPECT_TRUE(std::any_of(allowed.begin(), allowed.end(),
                            [&](const ToolDefinition& d) { return d.name == e.call.name; }))
        << e.call.name << " in " << e.state_before;
  }
}

ReplayScript out_of_state_script() {
  ReplayScript s;
  s.entries.push_back(entry(CallPurpose::route, "USER_INTENT = Vision"));
  s.entries.push_back(entry(CallPurpose::turn, "Detecting.\nCURRENT_STAGE = Load",
                            {call("run_detection", {{"handle", "h1"}})}));
  s.entries.push_back(entry(CallPurpose::reflect, "Load first.",
                            {call("load_product", {{"product", "xview1"}})}));
  return s;
}

TEST(Gating, OutOfStateCallIsRejected) {
  const Outcome o = run(task_of("vessel_detect_map"), out_of_state_script(), one_turn());
  ASSERT_FALSE(o.run.turns.empty());
  ASSERT_EQ(o.run.turns[0].rejected.size(), 1u);
  EXPECT_EQ(o.run.turns[0].rejected[0].call.name, "run_detection");
  EXPECT_NE(o.run.turns[0].rejected[0].reason.find("ToolNotAvailable"), std::string::npos);
  for (const auto& e : o.run.trajectory) EXPECT_NE(e.call.name, "run_detection");
}

TEST(Gating, ReactModeExecutesAnyTool) {
  const Outcome o = run(task_of("vessel_detect_map"), out_of_state_script(),
                        [] {
                          AgentConfig c = AgentConfig::for_mode(AgentMode::react);
                          c.max_turns = 1;
                          return c;
                        }());
  ASSERT_EQ(o.run.trajectory.size(), 1u);
  EXPECT_EQ(o.run.trajectory[0].call.name, "run_detection");
  EXPECT_TRUE(o.run.turns.at(0).rejected.empty());
}

ReplayScript jump_script() {
  ReplayScript s;
  s.entries.push_back(entry(CallPurpose::route, "USER_INTENT = Vision"));
  s.entries.push_back(entry(CallPurpose::turn, "Loaded.\nCURRENT_STAGE = Map",
                            {call("load_product", {{"product", "xview1"}})}));
  return s;
}

TEST(Transitions, IllegalTargetIsClampedToTheCurrentState) {
  const Outcome o = run(task_of("vessel_detect_map"), jump_script(), one_turn());
  ASSERT_FALSE(o.run.turns.empty());
  EXPECT_EQ(o.run.turns[0].state_after, "Load");
  EXPECT_FALSE(o.run.turns[0].diagnostics.empty());
  EXPECT_EQ(o.run.status, RunStatus::max_turns_exhausted);
}

TEST(Transitions, StrictModeAbortsOnAnIllegalTarget) {
  AgentConfig cfg = one_turn();
  cfg.transition_mode = TransitionMode::strict;
  const Outcome o = run(task_of("vessel_detect_map"), jump_script(), cfg);
  EXPECT_EQ(o.run.status, RunStatus::aborted);
}

TEST(Transitions, MissingStageTagEarnsACappedReminder) {
  ReplayScript s;
  s.entries.push_back(entry(CallPurpose::route, "USER_INTENT = Vision"));
  for (int i = 0; i < 5; ++i) s.entries.push_back(entry(CallPurpose::turn, "Hmm."));
  AgentConfig cfg;
  cfg.max_turns = 5;
  const Outcome o = run(task_of("vessel_detect_map"), s, cfg);
  int reminders = 0;
  for (const auto& r : o.requests) {
    if (r.purpose != CallPurpose::turn) continue;
    // Instructions are per-turn and hidden afterwards, so only the newest
    // one is in view.
    if (r.messages.back().content.find("Reminder:") != std::string::npos) ++reminders;
  }
  EXPECT_EQ(reminders, 2);
  EXPECT_EQ(o.run.turns.back().state_after, "Load");
}

}  // namespace
}  // namespace geoflow
