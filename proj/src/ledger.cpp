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

#include "geoflow/ledger.hpp"

#include <set>
#include <sstream>

namespace geoflow {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

Role role_from_string(std::string_view text) {
  if (text == "system") return Role::system;
  if (text == "user") return Role::user;
  if (text == "assistant") return Role::assistant;
  if (text == "tool") return Role::tool;
  throw RoleViolation("unknown role '" + std::string(text) + "'");
}

Json to_json(const UsageRecord& usage) {
  Json j = Json::object();
  j["input_tokens"] = usage.input_tokens;
  j["cached_tokens"] = usage.cached_tokens;
  j["output_tokens"] = usage.output_tokens;
  j["wall_seconds"] = usage.wall_seconds;
  return j;
}

UsageRecord usage_from_json(const Json& j) {
  UsageRecord u;
  u.input_tokens = j.value("input_tokens", std::int64_t{0});
  u.cached_tokens = j.value("cached_tokens", std::int64_t{0});
  u.output_tokens = j.value("output_tokens", std::int64_t{0});
  u.wall_seconds = j.value("wall_seconds", 0.0);
  if (u.input_tokens < 0 || u.cached_tokens < 0 || u.output_tokens < 0 || u.wall_seconds < 0) {
    throw Error("usage counts must be non-negative");
  }
  return u;
}

Json to_json(const ChatMessage& msg) {
  Json j = Json::object();
  j["turn_index"] = msg.turn_index;
  j["role"] = to_string(msg.role);
  j["content"] = msg.content;
  if (msg.tool_calls) {
    Json calls = Json::array();
    for (const auto& c : *msg.tool_calls) calls.push_back(to_json(c));
    j["tool_calls"] = std::move(calls);
  }
  if (msg.tool_call_id) j["tool_call_id"] = *msg.tool_call_id;
  if (msg.usage) j["usage"] = to_json(*msg.usage);
  return j;
}

ChatMessage message_from_json(const Json& j) {
  static const std::set<std::string> kFields{"turn_index", "role",         "content",
                                             "tool_calls", "tool_call_id", "usage"};
  for (const auto& [key, _] : j.items()) {
    if (!kFields.count(key)) throw Error("unexpected transcript field '" + key + "'");
  }
  ChatMessage msg;
  msg.turn_index = j.at("turn_index").get<std::int64_t>();
  msg.role = role_from_string(j.at("role").get<std::string>());
  msg.content = j.at("content").get<std::string>();
  if (j.contains("tool_calls")) {
    std::vector<ToolCall> calls;
    for (const auto& c : j.at("tool_calls")) calls.push_back(tool_call_from_json(c));
    msg.tool_calls = std::move(calls);
  }
  if (j.contains("tool_call_id")) msg.tool_call_id = j.at("tool_call_id").get<std::string>();
  if (j.contains("usage")) msg.usage = usage_from_json(j.at("usage"));
  return msg;
}

TokenTotals& TokenTotals::operator+=(const TokenTotals& other) noexcept {
  input_tokens += other.input_tokens;
  cached_tokens += other.cached_tokens;
  output_tokens += other.output_tokens;
  estimated = estimated || other.estimated;
  return *this;
}

std::int64_t estimate_tokens(std::string_view text) noexcept {
  const auto words = static_cast<std::int64_t>(count_words(text));
  return (words * 4 + 2) / 3;
}

void Ledger::append(ChatMessage msg) {
  if (messages_.empty() && msg.role != Role::system) {
    throw RoleViolation("the first ledger message must have role system");
  }
  if (msg.tool_calls && msg.role != Role::assistant) {
    throw RoleViolation("tool_calls are only allowed on assistant messages");
  }
  if (msg.usage && msg.role != Role::assistant) {
    throw RoleViolation("usage is only recorded on assistant messages");
  }
  if (msg.role == Role::tool) {
    if (!msg.tool_call_id) throw RoleViolation("tool message is missing tool_call_id");
    std::size_t matches = 0;
    for (const auto& m : messages_) {
      if (m.role != Role::assistant || !m.tool_calls) continue;
      for (const auto& c : *m.tool_calls) matches += c.call_id == *msg.tool_call_id;
    }
    if (matches != 1) {
      throw RoleViolation("tool_call_id '" + *msg.tool_call_id +
                          "' does not resolve to exactly one prior tool call");
    }
  } else if (msg.tool_call_id) {
    throw RoleViolation("tool_call_id is only allowed on tool messages");
  }
  if (msg.role == Role::assistant && msg.tool_calls) {
    std::set<std::string> ids;
    for (const auto& m : messages_) {
      if (!m.tool_calls) continue;
      for (const auto& c : *m.tool_calls) ids.insert(c.call_id);
    }
    for (const auto& c : *msg.tool_calls) {
      if (c.call_id.empty() || !ids.insert(c.call_id).second) {
        throw RoleViolation("duplicate or empty call_id '" + c.call_id + "'");
      }
    }
  }
  if (msg.turn_index != next_turn_index()) {
    throw OrderViolation("turn_index " + std::to_string(msg.turn_index) + " does not follow " +
                         std::to_string(next_turn_index() - 1));
  }
  messages_.push_back(std::move(msg));
}

const ChatMessage& Ledger::push(Role role, std::string content) {
  ChatMessage msg;
  msg.role = role;
  msg.content = std::move(content);
  msg.turn_index = next_turn_index();
  append(std::move(msg));
  return messages_.back();
}

const ChatMessage& Ledger::push_assistant(std::string content, std::vector<ToolCall> calls,
                                          std::optional<UsageRecord> usage) {
  ChatMessage msg;
  msg.role = Role::assistant;
  msg.content = std::move(content);
  if (!calls.empty()) msg.tool_calls = std::move(calls);
  msg.usage = usage;
  msg.turn_index = next_turn_index();
  append(std::move(msg));
  return messages_.back();
}

const ChatMessage& Ledger::push_tool(std::string call_id, std::string content) {
  ChatMessage msg;
  msg.role = Role::tool;
  msg.content = std::move(content);
  msg.tool_call_id = std::move(call_id);
  msg.turn_index = next_turn_index();
  append(std::move(msg));
  return messages_.back();
}

std::string Ledger::to_jsonl() const {
  std::string out;
  for (const auto& m : messages_) {
    out += to_json(m).dump();
    out += '\n';
  }
  return out;
}

Ledger Ledger::from_jsonl(std::string_view text) {
  Ledger ledger;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (trim(line).empty()) continue;
    ledger.append(message_from_json(Json::parse(line)));
  }
  return ledger;
}

TokenTotals token_totals(const Ledger& ledger) {
  TokenTotals totals;
  std::int64_t pending_input = 0;
  for (const auto& m : ledger.messages()) {
    if (m.role != Role::assistant) {
      pending_input += estimate_tokens(m.content);
      continue;
    }
    if (m.usage) {
      totals.input_tokens += m.usage->input_tokens;
      totals.cached_tokens += m.usage->cached_tokens;
      totals.output_tokens += m.usage->output_tokens;
    } else {
      std::int64_t output = estimate_tokens(m.content);
      if (m.tool_calls) {
        for (const auto& c : *m.tool_calls) output += estimate_tokens(c.arguments.dump());
      }
      totals.input_tokens += pending_input;
      totals.output_tokens += output;
      totals.estimated = true;
    }
    pending_input = 0;
  }
  return totals;
}

}  // namespace geoflow
