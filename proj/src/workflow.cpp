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

#include "geoflow/workflow.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace geoflow {

const StateSpec* WorkflowSpec::find_state(std::string_view state) const noexcept {
  for (const auto& s : states) {
    if (s.name == state) return &s;
  }
  return nullptr;
}

const StateSpec* WorkflowSpec::error_state() const noexcept {
  for (const auto& s : states) {
    if (s.is_error) return &s;
  }
  return nullptr;
}

const IntentRoute* WorkflowSpec::find_route(std::string_view intent) const noexcept {
  for (const auto& r : intent_routes) {
    if (r.intent == intent) return &r;
  }
  return nullptr;
}

namespace {

bool is_ident_start(char c) noexcept { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }
bool is_ident_char(char c) noexcept {
  return is_ident_start(c) || (c >= '0' && c <= '9') || c == '_';
}

bool is_identifier(std::string_view s) noexcept {
  return !s.empty() && is_ident_start(s[0]) && std::all_of(s.begin(), s.end(), is_ident_char);
}

std::string require_string(const Json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) throw SchemaError(path + ": missing key '" + key + "'");
  const Json& v = obj.at(key);
  if (!v.is_string()) throw SchemaError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

std::vector<std::string> string_list(const Json& obj, const char* key, const std::string& path) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  const Json& v = obj.at(key);
  if (!v.is_array()) throw SchemaError(path + "." + key + ": expected an array");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) {
      throw SchemaError(path + "." + key + "[" + std::to_string(i) + "]: expected a string");
    }
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

bool optional_bool(const Json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) return false;
  if (!obj.at(key).is_boolean()) throw SchemaError(path + "." + key + ": expected a boolean");
  return obj.at(key).get<bool>();
}

StateSpec parse_state(const Json& j, const std::string& path, const ToolRegistry& registry,
                      std::vector<std::string>& next) {
  if (!j.is_object()) throw SchemaError(path + ": expected an object");
  StateSpec s;
  s.name = require_string(j, "name", path);
  if (!is_identifier(s.name)) {
    throw SchemaError(path + ".name: '" + s.name + "' is not a valid identifier");
  }
  s.instructions = j.contains("instructions") ? require_string(j, "instructions", path) : "";
  s.allowed_tools = string_list(j, "tools", path);
  for (std::size_t i = 0; i < s.allowed_tools.size(); ++i) {
    if (!registry.contains(s.allowed_tools[i])) {
      throw UnknownTool(path + ".tools[" + std::to_string(i) + "]: unregistered tool '" +
                        s.allowed_tools[i] + "'");
    }
  }
  if (j.contains("few_shot")) {
    const Json& shots = j.at("few_shot");
    if (!shots.is_array()) throw SchemaError(path + ".few_shot: expected an array");
    for (std::size_t i = 0; i < shots.size(); ++i) {
      const std::string sp = path + ".few_shot[" + std::to_string(i) + "]";
      FewShot shot;
      shot.user = require_string(shots[i], "user", sp);
      shot.assistant = require_string(shots[i], "assistant", sp);
      if (shots[i].contains("tool_calls")) {
        const Json& calls = shots[i].at("tool_calls");
        if (!calls.is_array()) throw SchemaError(sp + ".tool_calls: expected an array");
        for (const auto& c : calls) {
          try {
            shot.tool_calls.push_back(tool_call_from_json(c));
          } catch (const std::exception& e) {
            throw SchemaError(sp + ".tool_calls: " + e.what());
          }
          if (!registry.contains(shot.tool_calls.back().name)) {
            throw UnknownTool(sp + ".tool_calls: unregistered tool '" +
                              shot.tool_calls.back().name + "'");
          }
        }
      }
      s.few_shot.push_back(std::move(shot));
    }
  }
  s.is_terminal = optional_bool(j, "terminal", path);
  s.is_error = optional_bool(j, "error", path);
  next = string_list(j, "next", path);
  return s;
}

}  // namespace

WorkflowSpec load_workflow_spec(std::string_view document, const ToolRegistry& registry) {
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("$: expected an object");

  WorkflowSpec spec;
  spec.name = require_string(doc, "name", "$");
  spec.preamble = doc.contains("preamble") ? require_string(doc, "preamble", "$") : "";
  spec.initial = require_string(doc, "initial", "$");
  if (!doc.contains("states") || !doc.at("states").is_array() || doc.at("states").empty()) {
    throw SchemaError("$.states: expected a non-empty array");
  }

  const Json& states = doc.at("states");
  std::set<std::string> names;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string path = "states[" + std::to_string(i) + "]";
    std::vector<std::string> next;
    StateSpec s = parse_state(states[i], path, registry, next);
    if (!names.insert(s.name).second) {
      throw SchemaError(path + ".name: duplicate state '" + s.name + "'");
    }
    spec.transitions[s.name] = std::move(next);
    spec.states.push_back(std::move(s));
  }

  // Graph checks.
  if (!spec.find_state(spec.initial)) {
    throw GraphError("$.initial: unknown state '" + spec.initial + "'");
  }
  std::size_t error_states = 0;
  for (std::size_t i = 0; i < spec.states.size(); ++i) {
    const StateSpec& s = spec.states[i];
    const auto& next = spec.transitions.at(s.name);
    const std::string path = "states[" + std::to_string(i) + "]";
    for (std::size_t k = 0; k < next.size(); ++k) {
      if (!spec.find_state(next[k])) {
        throw GraphError(path + ".next[" + std::to_string(k) + "]: edge " + s.name + " -> " +
                         next[k] + " names an unknown state");
      }
    }
    if (s.is_terminal && s.is_error) {
      throw GraphError(path + ": state '" + s.name + "' cannot be both terminal and error");
    }
    if (s.is_terminal && !next.empty()) {
      throw GraphError(path + ": terminal state '" + s.name + "' has successors");
    }
    if (s.is_error) {
      ++error_states;
      if (!next.empty()) {
        throw GraphError(path + ": error state '" + s.name +
                         "' must not list successors (it returns to the pre-error state)");
      }
    } else if (!s.is_terminal && next.empty()) {
      throw GraphError(path + ": non-terminal state '" + s.name + "' has no successors");
    }
  }
  if (error_states > 1) throw GraphError("$.states: more than one error state");

  if (doc.contains("intents")) {
    const Json& intents = doc.at("intents");
    if (!intents.is_object()) throw SchemaError("$.intents: expected an object");
    for (const auto& [intent, entry] : intents.items()) {
      if (!is_identifier(intent)) {
        throw SchemaError("$.intents: '" + intent + "' is not a valid identifier");
      }
      if (!entry.is_string()) throw SchemaError("$.intents." + intent + ": expected a string");
      const std::string target = entry.get<std::string>();
      if (!spec.find_state(target)) {
        throw GraphError("$.intents." + intent + ": unknown entry state '" + target + "'");
      }
      spec.intent_routes.push_back({intent, target});
    }
    if (!spec.intent_routes.empty()) spec.default_intent = spec.intent_routes.front().intent;
  }
  if (doc.contains("default_intent")) {
    spec.default_intent = require_string(doc, "default_intent", "$");
    if (!spec.find_route(spec.default_intent)) {
      throw GraphError("$.default_intent: '" + spec.default_intent + "' is not a declared intent");
    }
  }

  // Reachability from the initial state and every routed entry state.
  std::set<std::string> seen;
  std::vector<std::string> stack{spec.initial};
  for (const auto& r : spec.intent_routes) stack.push_back(r.entry_state);
  while (!stack.empty()) {
    std::string cur = stack.back();
    stack.pop_back();
    if (!seen.insert(cur).second) continue;
    for (const auto& n : spec.transitions.at(cur)) stack.push_back(n);
  }
  for (const auto& s : spec.states) {
    if (!s.is_error && !seen.count(s.name)) {
      throw GraphError("state '" + s.name + "' is unreachable from '" + spec.initial + "'");
    }
  }
  return spec;
}

WorkflowSpec load_workflow_file(const std::string& path, const ToolRegistry& registry) {
  return load_workflow_spec(read_file(path), registry);
}

std::optional<TagMatch> parse_tag(std::string_view text, std::string_view keyword) noexcept {
  std::optional<TagMatch> last;
  if (keyword.empty()) return last;
  std::size_t pos = 0;
  while ((pos = text.find(keyword, pos)) != std::string_view::npos) {
    const std::size_t begin = pos;
    pos += 1;
    if (begin > 0 && is_ident_char(text[begin - 1])) continue;
    std::size_t i = begin + keyword.size();
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    if (i >= text.size() || text[i] != '=') continue;
    ++i;
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    if (i >= text.size() || !is_ident_start(text[i])) continue;
    const std::size_t value_begin = i;
    while (i < text.size() && is_ident_char(text[i])) ++i;
    last = TagMatch{std::string(text.substr(value_begin, i - value_begin)), begin, i};
  }
  return last;
}

std::optional<TagMatch> parse_stage(std::string_view assistant_text) noexcept {
  return parse_tag(assistant_text, "CURRENT_STAGE");
}

std::optional<TagMatch> parse_intent(std::string_view assistant_text) noexcept {
  return parse_tag(assistant_text, "USER_INTENT");
}

bool contains_terminate(std::string_view text) noexcept {
  static constexpr std::string_view kWord = "TERMINATE";
  std::size_t pos = 0;
  while ((pos = text.find(kWord, pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_ident_char(text[pos - 1]);
    const std::size_t after = pos + kWord.size();
    const bool right_ok = after >= text.size() || !is_ident_char(text[after]);
    if (left_ok && right_ok) return true;
    pos = after;
  }
  return false;
}

TransitionDecision validate_transition(const WorkflowSpec& spec, std::string_view current,
                                       std::string_view proposed, TransitionMode mode) {
  const StateSpec* cur = spec.find_state(current);
  if (!cur) throw UnknownState("unknown current state '" + std::string(current) + "'");

  using Kind = TransitionDecision::Kind;
  const auto refuse = [&](std::string reason) {
    if (mode == TransitionMode::strict) return TransitionDecision{Kind::reject, "", reason};
    return TransitionDecision{Kind::clamp, std::string(current), std::move(reason)};
  };

  if (proposed == current) return {Kind::accept, std::string(current), ""};
  const StateSpec* target = spec.find_state(proposed);
  if (!target) {
    // Unknown names are clamped in both modes; only known-but-disallowed
    // edges are rejected in strict mode.
    return {Kind::clamp, std::string(current), "unknown state '" + std::string(proposed) + "'"};
  }
  if (target->is_error && !cur->is_terminal) return {Kind::accept, target->name, ""};
  const auto& next = spec.transitions.at(cur->name);
  if (std::find(next.begin(), next.end(), proposed) != next.end()) {
    return {Kind::accept, target->name, ""};
  }
  return refuse("transition " + cur->name + " -> " + target->name + " is not allowed");
}

std::vector<ToolDefinition> tools_for_state(const WorkflowSpec& spec, std::string_view state,
                                            const ToolRegistry& registry) {
  const StateSpec* s = spec.find_state(state);
  if (!s) throw UnknownState("unknown state '" + std::string(state) + "'");
  std::vector<ToolDefinition> out;
  bool has_final = false;
  for (const auto& name : s->allowed_tools) {
    const ToolDefinition* def = registry.find(name);
    if (!def) throw UnknownTool("state '" + s->name + "' references unregistered tool '" + name + "'");
    has_final = has_final || name == kFinalAnswerTool;
    out.push_back(*def);
  }
  if (!has_final) {
    const ToolDefinition* fa = registry.find(kFinalAnswerTool);
    if (!fa) throw UnknownTool("registry has no final_answer tool");
    out.push_back(*fa);
  }
  return out;
}

bool is_acyclic(const WorkflowSpec& spec) {
  enum class Mark { none, active, done };
  std::map<std::string, Mark> mark;
  std::function<bool(const std::string&)> visit = [&](const std::string& s) {
    mark[s] = Mark::active;
    for (const auto& n : spec.transitions.at(s)) {
      if (n == s) continue;
      const StateSpec* ns = spec.find_state(n);
      if (ns && ns->is_error) continue;
      if (mark[n] == Mark::active) return false;
      if (mark[n] == Mark::none && !visit(n)) return false;
    }
    mark[s] = Mark::done;
    return true;
  };
  for (const auto& s : spec.states) {
    if (s.is_error) continue;
    if (mark[s.name] == Mark::none && !visit(s.name)) return false;
  }
  return true;
}

}  // namespace geoflow
