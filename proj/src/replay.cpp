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

#include "geoflow/backends.hpp"

namespace geoflow {

Json to_json(const ReplayScript& script) {
  Json entries = Json::array();
  for (const auto& e : script.entries) {
    Json j = Json::object();
    j["channel"] = to_string(e.channel);
    if (e.key) j["key"] = *e.key;
    j["assistant_text"] = e.assistant_text;
    Json calls = Json::array();
    for (const auto& c : e.tool_calls) {
      Json cj = Json::object();
      cj["name"] = c.name;
      cj["arguments"] = c.arguments;
      calls.push_back(std::move(cj));
    }
    j["tool_calls"] = std::move(calls);
    if (e.usage) j["usage"] = to_json(*e.usage);
    entries.push_back(std::move(j));
  }
  Json out = Json::object();
  out["task_id"] = script.task_id;
  out["entries"] = std::move(entries);
  return out;
}

ReplayScript replay_script_from_json(const Json& j) {
  ReplayScript script;
  try {
    script.task_id = j.value("task_id", std::string{});
    for (const auto& e : j.at("entries")) {
      ReplayEntry entry;
      entry.channel = purpose_from_string(e.value("channel", std::string("turn")));
      if (e.contains("key")) entry.key = e.at("key").get<std::string>();
      entry.assistant_text = e.value("assistant_text", std::string{});
      if (e.contains("tool_calls")) {
        std::size_t i = 0;
        for (const auto& c : e.at("tool_calls")) {
          ToolCall call = tool_call_from_json(c);
          if (call.call_id.empty()) call.call_id = "call_" + std::to_string(i);
          entry.tool_calls.push_back(std::move(call));
          ++i;
        }
      }
      if (e.contains("usage")) entry.usage = usage_from_json(e.at("usage"));
      script.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed replay script: ") + e.what());
  }
  return script;
}

ReplayScript load_replay_script(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  try {
    return replay_script_from_json(Json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError("replay script '" + path + "' is not valid JSON: " + e.what());
  }
}

std::string message_key(const ChatMessage& msg) {
  Json canonical = Json::object();
  canonical["role"] = to_string(msg.role);
  canonical["content"] = msg.content;
  if (msg.tool_call_id) canonical["tool_call_id"] = *msg.tool_call_id;
  return hex64(fnv1a64(canonical.dump()));
}

ReplayBackend::ReplayBackend(ReplayScript script)
    : script_(std::move(script)), used_(script_.entries.size(), false) {}

ChatExchange ReplayBackend::complete(const std::vector<ChatMessage>& messages,
                                     const std::vector<ToolDefinition>&, CallPurpose purpose) {
  if (messages.empty() || messages.front().role != Role::system) {
    throw ProtocolError("request must start with a system message");
  }
  std::optional<std::string> key;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role != Role::assistant) {
      key = message_key(*it);
      break;
    }
  }

  std::optional<std::size_t> pick;
  if (key) {
    for (std::size_t i = 0; i < script_.entries.size(); ++i) {
      if (!used_[i] && script_.entries[i].key == key) {
        pick = i;
        break;
      }
    }
  }
  if (!pick) {
    for (std::size_t i = 0; i < script_.entries.size(); ++i) {
      if (!used_[i] && !script_.entries[i].key && script_.entries[i].channel == purpose) {
        pick = i;
        break;
      }
    }
  }
  if (!pick) {
    throw ProtocolError("replay script for '" + script_.task_id + "' has no entry left for a " +
                        std::string(to_string(purpose)) + " call");
  }
  used_[*pick] = true;
  const ReplayEntry& e = script_.entries[*pick];
  ChatExchange ex;
  ex.assistant_text = e.assistant_text;
  ex.tool_calls = e.tool_calls;
  ex.usage = e.usage;
  return ex;
}

std::size_t ReplayBackend::consumed() const noexcept {
  std::size_t n = 0;
  for (bool u : used_) n += u;
  return n;
}

std::size_t ReplayBackend::remaining(CallPurpose channel) const noexcept {
  std::size_t n = 0;
  for (std::size_t i = 0; i < used_.size(); ++i) {
    n += !used_[i] && script_.entries[i].channel == channel;
  }
  return n;
}

}  // namespace geoflow
