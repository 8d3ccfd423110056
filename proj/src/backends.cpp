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

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <regex>
#include <thread>

namespace geoflow {

std::string_view to_string(BackendKind kind) noexcept {
  switch (kind) {
    case BackendKind::openai_compat: return "openai_compat";
    case BackendKind::ollama: return "ollama";
    case BackendKind::replay: return "replay";
  }
  return "replay";
}

std::string_view to_string(CostBasis basis) noexcept {
  return basis == CostBasis::api ? "api" : "local";
}

std::string_view to_string(CallPurpose purpose) noexcept {
  switch (purpose) {
    case CallPurpose::turn: return "turn";
    case CallPurpose::reflect: return "reflect";
    case CallPurpose::confirm: return "confirm";
    case CallPurpose::route: return "route";
  }
  return "turn";
}

CallPurpose purpose_from_string(std::string_view text) {
  if (text == "turn") return CallPurpose::turn;
  if (text == "reflect") return CallPurpose::reflect;
  if (text == "confirm") return CallPurpose::confirm;
  if (text == "route") return CallPurpose::route;
  throw Error("unknown call purpose '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

BackendConfig parse_backend_config(std::string_view document, const std::string& base_dir) {
  Json j;
  try {
    j = Json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("backend config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("backend config must be an object");
  BackendConfig cfg;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "openai_compat") {
      cfg.kind = BackendKind::openai_compat;
      cfg.cost_basis = CostBasis::api;
    } else if (kind == "ollama") {
      cfg.kind = BackendKind::ollama;
      cfg.cost_basis = CostBasis::local;
    } else if (kind == "replay") {
      cfg.kind = BackendKind::replay;
      cfg.cost_basis = CostBasis::api;
    } else {
      throw ConfigError("unknown backend kind '" + kind + "'");
    }
    cfg.endpoint = j.value("endpoint", std::string{});
    cfg.model = j.value("model", std::string{});
    cfg.api_key_env = j.value("api_key_env", std::string{});
    cfg.temperature = j.value("temperature", 0.0);
    cfg.request_timeout = j.value("request_timeout", 120.0);
    cfg.max_retries = j.value("max_retries", 2);
    const std::string mode = j.value("tool_mode", std::string("native"));
    if (mode == "native") {
      cfg.tool_mode = ToolMode::native;
    } else if (mode == "text") {
      cfg.tool_mode = ToolMode::text;
    } else {
      throw ConfigError("tool_mode must be native or text");
    }
    if (j.contains("cost_basis")) {
      const std::string basis = j.at("cost_basis").get<std::string>();
      if (basis == "api") {
        cfg.cost_basis = CostBasis::api;
      } else if (basis == "local") {
        cfg.cost_basis = CostBasis::local;
      } else {
        throw ConfigError("cost_basis must be api or local");
      }
    }
    cfg.scripts_dir = j.value("scripts_dir", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("backend config: ") + e.what());
  }
  if (cfg.temperature < 0) throw ConfigError("temperature must be >= 0");
  if (cfg.max_retries < 0 || cfg.max_retries > 10) throw ConfigError("max_retries must be in [0,10]");
  if (cfg.request_timeout <= 0) throw ConfigError("request_timeout must be positive");
  if (cfg.kind == BackendKind::replay) {
    if (cfg.scripts_dir.empty()) throw ConfigError("replay backend requires scripts_dir");
    if (!base_dir.empty() && std::filesystem::path(cfg.scripts_dir).is_relative()) {
      cfg.scripts_dir = (std::filesystem::path(base_dir) / cfg.scripts_dir).lexically_normal().string();
    }
    if (cfg.model.empty()) cfg.model = "replay";
  } else {
    if (cfg.endpoint.empty()) throw ConfigError("backend requires an endpoint");
    if (cfg.model.empty()) throw ConfigError("backend requires a model");
  }
  return cfg;
}

BackendConfig load_backend_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_backend_config(text, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

std::string text_mode_tool_block(const std::vector<ToolDefinition>& tools) {
  std::string out =
      "\n\n# Tools\nYou can call the following tools. To call a tool, write a span of the form\n"
      "<tool_call>{\"name\": \"<tool name>\", \"arguments\": {<arguments as JSON>}}</tool_call>\n"
      "Use one span per call.\n";
  for (const auto& t : tools) {
    out += "\n";
    out += t.render();
    out += "\n";
  }
  return out;
}

std::string render_calls_inline(const std::vector<ToolCall>& calls) {
  std::string out;
  for (const auto& c : calls) {
    Json span = Json::object();
    span["name"] = c.name;
    span["arguments"] = c.arguments;
    out += "\n<tool_call>" + span.dump() + "</tool_call>";
  }
  return out;
}

Json tools_field(const std::vector<ToolDefinition>& tools) {
  Json arr = Json::array();
  for (const auto& t : tools) {
    Json fn = Json::object();
    fn["name"] = t.name;
    fn["description"] = t.description;
    fn["parameters"] = t.parameters_schema();
    Json entry = Json::object();
    entry["type"] = "function";
    entry["function"] = std::move(fn);
    arr.push_back(std::move(entry));
  }
  return arr;
}

enum class Protocol { openai, ollama };

Json wire_messages(Protocol protocol, const std::vector<ChatMessage>& messages,
                   const std::vector<ToolDefinition>& tools, ToolMode mode) {
  Json arr = Json::array();
  bool first_system = true;
  for (const auto& m : messages) {
    Json w = Json::object();
    if (mode == ToolMode::text) {
      if (m.role == Role::tool) {
        w["role"] = "user";
        w["content"] = "Tool result (" + m.tool_call_id.value_or("") + "):\n" + m.content;
      } else {
        w["role"] = to_string(m.role);
        std::string content = m.content;
        if (m.role == Role::system && first_system && !tools.empty()) {
          content += text_mode_tool_block(tools);
        }
        if (m.role == Role::assistant && m.tool_calls) content += render_calls_inline(*m.tool_calls);
        w["content"] = std::move(content);
      }
      if (m.role == Role::system) first_system = false;
      arr.push_back(std::move(w));
      continue;
    }
    w["role"] = to_string(m.role);
    w["content"] = m.content;
    if (m.role == Role::assistant && m.tool_calls) {
      Json calls = Json::array();
      for (const auto& c : *m.tool_calls) {
        Json call = Json::object();
        Json fn = Json::object();
        fn["name"] = c.name;
        if (protocol == Protocol::openai) {
          call["id"] = c.call_id;
          call["type"] = "function";
          fn["arguments"] = c.arguments.dump();
        } else {
          fn["arguments"] = c.arguments;
        }
        call["function"] = std::move(fn);
        calls.push_back(std::move(call));
      }
      w["tool_calls"] = std::move(calls);
    }
    if (m.role == Role::tool && protocol == Protocol::openai) {
      w["tool_call_id"] = m.tool_call_id.value_or("");
    }
    arr.push_back(std::move(w));
  }
  return arr;
}

}  // namespace

std::string serialize_openai_request(const std::string& model,
                                     const std::vector<ChatMessage>& messages,
                                     const std::vector<ToolDefinition>& tools, double temperature,
                                     ToolMode mode) {
  Json body = Json::object();
  body["model"] = model;
  body["messages"] = wire_messages(Protocol::openai, messages, tools, mode);
  if (mode == ToolMode::native && !tools.empty()) body["tools"] = tools_field(tools);
  body["temperature"] = temperature;
  body["stream"] = false;
  return body.dump();
}

std::string serialize_ollama_request(const std::string& model,
                                     const std::vector<ChatMessage>& messages,
                                     const std::vector<ToolDefinition>& tools, double temperature,
                                     ToolMode mode) {
  Json body = Json::object();
  body["model"] = model;
  body["messages"] = wire_messages(Protocol::ollama, messages, tools, mode);
  if (mode == ToolMode::native && !tools.empty()) body["tools"] = tools_field(tools);
  body["stream"] = false;
  Json options = Json::object();
  options["temperature"] = temperature;
  body["options"] = std::move(options);
  return body.dump();
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

Json parse_body(std::string_view body) {
  try {
    return Json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("response body is not valid JSON: ") + e.what());
  }
}

const ToolDefinition* find_tool(const std::vector<ToolDefinition>& tools, std::string_view name) {
  for (const auto& t : tools) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

/// Arguments arrive either as an object or as a JSON-encoded string.
Json decode_arguments(const Json& raw) {
  if (raw.is_null()) return Json::object();
  if (raw.is_object()) return raw;
  if (raw.is_string()) {
    const std::string s = raw.get<std::string>();
    if (trim(s).empty()) return Json::object();
    try {
      Json parsed = Json::parse(s);
      if (parsed.is_object()) return parsed;
    } catch (const nlohmann::json::parse_error&) {
    }
    Json wrapped = Json::object();
    wrapped["_raw_arguments"] = s;
    return wrapped;
  }
  throw ProtocolError("tool call arguments must be an object or a string");
}

ToolCall native_call(const Json& entry, std::size_t index, const std::vector<ToolDefinition>& tools) {
  if (!entry.is_object() || !entry.contains("function") || !entry.at("function").is_object()) {
    throw ProtocolError("tool_calls entry lacks a function object");
  }
  const Json& fn = entry.at("function");
  if (!fn.contains("name") || !fn.at("name").is_string()) {
    throw ProtocolError("tool_calls entry lacks a function name");
  }
  ToolCall call;
  call.call_id = entry.contains("id") && entry.at("id").is_string()
                     ? entry.at("id").get<std::string>()
                     : "call_" + std::to_string(index);
  call.name = fn.at("name").get<std::string>();
  call.arguments = decode_arguments(fn.contains("arguments") ? fn.at("arguments") : Json());
  if (const ToolDefinition* def = find_tool(tools, call.name)) {
    call.arguments = coerce_arguments(*def, call.arguments);
  }
  return call;
}

std::int64_t count_field(const Json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_number_integer()) return 0;
  return std::max<std::int64_t>(0, obj.at(key).get<std::int64_t>());
}

}  // namespace

ChatExchange parse_openai_response(std::string_view body,
                                   const std::vector<ToolDefinition>& tools, ToolMode mode) {
  const Json j = parse_body(body);
  if (!j.is_object() || !j.contains("choices") || !j.at("choices").is_array() ||
      j.at("choices").empty()) {
    throw ProtocolError("response has no choices");
  }
  const Json& choice = j.at("choices").at(0);
  if (!choice.contains("message") || !choice.at("message").is_object()) {
    throw ProtocolError("choice has no message");
  }
  const Json& msg = choice.at("message");
  ChatExchange ex;
  if (msg.contains("content") && msg.at("content").is_string()) {
    ex.assistant_text = msg.at("content").get<std::string>();
  }
  if (msg.contains("tool_calls") && msg.at("tool_calls").is_array()) {
    const Json& calls = msg.at("tool_calls");
    for (std::size_t i = 0; i < calls.size(); ++i) {
      ex.tool_calls.push_back(native_call(calls[i], i, tools));
    }
  }
  if (mode == ToolMode::text) {
    auto extracted = extract_tool_calls_text(ex.assistant_text, tools, &ex.diagnostics);
    ex.tool_calls.insert(ex.tool_calls.end(), extracted.begin(), extracted.end());
  }
  if (j.contains("usage") && j.at("usage").is_object()) {
    const Json& u = j.at("usage");
    UsageRecord usage;
    const std::int64_t prompt = count_field(u, "prompt_tokens");
    std::int64_t cached = 0;
    if (u.contains("prompt_tokens_details") && u.at("prompt_tokens_details").is_object()) {
      cached = count_field(u.at("prompt_tokens_details"), "cached_tokens");
    }
    cached = std::min(cached, prompt);
    usage.input_tokens = prompt - cached;
    usage.cached_tokens = cached;
    usage.output_tokens = count_field(u, "completion_tokens");
    ex.usage = usage;
  }
  return ex;
}

ChatExchange parse_ollama_response(std::string_view body,
                                   const std::vector<ToolDefinition>& tools, ToolMode mode) {
  const Json j = parse_body(body);
  if (!j.is_object() || !j.contains("message") || !j.at("message").is_object()) {
    throw ProtocolError("response has no message");
  }
  const Json& msg = j.at("message");
  ChatExchange ex;
  if (msg.contains("content") && msg.at("content").is_string()) {
    ex.assistant_text = msg.at("content").get<std::string>();
  }
  if (msg.contains("tool_calls") && msg.at("tool_calls").is_array()) {
    const Json& calls = msg.at("tool_calls");
    for (std::size_t i = 0; i < calls.size(); ++i) {
      ex.tool_calls.push_back(native_call(calls[i], i, tools));
    }
  }
  if (mode == ToolMode::text) {
    auto extracted = extract_tool_calls_text(ex.assistant_text, tools, &ex.diagnostics);
    ex.tool_calls.insert(ex.tool_calls.end(), extracted.begin(), extracted.end());
  }
  if (j.contains("prompt_eval_count") || j.contains("eval_count")) {
    UsageRecord usage;
    usage.input_tokens = count_field(j, "prompt_eval_count");
    usage.output_tokens = count_field(j, "eval_count");
    ex.usage = usage;
  }
  return ex;
}

std::vector<ToolCall> extract_tool_calls_text(std::string_view assistant_text,
                                              const std::vector<ToolDefinition>& tools,
                                              std::vector<std::string>* log) {
  static const std::regex kSpan(R"(<tool_call>([\s\S]*?)</tool_call>)");
  static const std::regex kFence(R"(```[A-Za-z0-9_-]*[ \t]*\r?\n?([\s\S]*?)```)");

  struct Found {
    std::size_t pos;
    std::string body;
  };
  std::vector<Found> found;
  const std::string text(assistant_text);
  for (const auto* re : {&kSpan, &kFence}) {
    for (auto it = std::sregex_iterator(text.begin(), text.end(), *re); it != std::sregex_iterator();
         ++it) {
      found.push_back({static_cast<std::size_t>(it->position(0)), (*it)[1].str()});
    }
  }
  std::sort(found.begin(), found.end(), [](const Found& a, const Found& b) { return a.pos < b.pos; });

  std::vector<ToolCall> calls;
  for (const auto& f : found) {
    Json obj;
    try {
      obj = Json::parse(f.body);
    } catch (const nlohmann::json::parse_error&) {
      if (log) log->push_back("skipped unparseable span at offset " + std::to_string(f.pos));
      continue;
    }
    if (!obj.is_object() || !obj.contains("name") || !obj.at("name").is_string()) {
      if (log) log->push_back("skipped span without a tool name at offset " + std::to_string(f.pos));
      continue;
    }
    const std::string name = obj.at("name").get<std::string>();
    const ToolDefinition* def = find_tool(tools, name);
    if (!def) {
      if (log) log->push_back("dropped call to unknown tool '" + name + "'");
      continue;
    }
    Json args;
    try {
      args = decode_arguments(obj.contains("arguments") ? obj.at("arguments") : Json());
    } catch (const ProtocolError&) {
      if (log) log->push_back("skipped call to '" + name + "' with non-object arguments");
      continue;
    }
    ToolCall call;
    call.call_id = "call_" + std::to_string(calls.size());
    call.name = name;
    call.arguments = coerce_arguments(*def, args);
    calls.push_back(std::move(call));
  }
  return calls;
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(BackendConfig cfg, std::shared_ptr<HttpTransport> transport,
                                 Sleeper sleeper)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  if (cfg_.kind == BackendKind::replay) throw ConfigError("HttpChatBackend cannot serve replay");
  if (!transport_) transport_ = make_http_transport();
  if (!sleeper_) {
    sleeper_ = [](double s) {
      std::this_thread::sleep_for(std::chrono::duration<double>(s));
    };
  }
}

std::string HttpChatBackend::url() const {
  std::string base = cfg_.endpoint;
  while (!base.empty() && base.back() == '/') base.pop_back();
  return base + (cfg_.kind == BackendKind::openai_compat ? "/v1/chat/completions" : "/api/chat");
}

HttpHeaders HttpChatBackend::headers() const {
  HttpHeaders h{{"Content-Type", "application/json"}};
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
      h.emplace_back("Authorization", std::string("Bearer ") + key);
    }
  }
  return h;
}

std::string HttpChatBackend::serialize(const std::vector<ChatMessage>& messages,
                                       const std::vector<ToolDefinition>& tools) const {
  return cfg_.kind == BackendKind::openai_compat
             ? serialize_openai_request(cfg_.model, messages, tools, cfg_.temperature, cfg_.tool_mode)
             : serialize_ollama_request(cfg_.model, messages, tools, cfg_.temperature, cfg_.tool_mode);
}

HttpResponse HttpChatBackend::post_with_retries(const std::string& body) {
  const std::string target = url();
  const HttpHeaders hdrs = headers();
  double delay = 1.0;
  for (int attempt = 0;; ++attempt) {
    std::string failure;
    try {
      HttpResponse resp = transport_->post(target, hdrs, body, cfg_.request_timeout);
      if (resp.status == 401 || resp.status == 403) {
        throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(resp.status) + ")");
      }
      if (resp.status >= 200 && resp.status < 300) return resp;
      if (resp.status != 429 && resp.status < 500) {
        throw ProtocolError("endpoint returned HTTP " + std::to_string(resp.status) + ": " +
                            resp.body.substr(0, 200));
      }
      failure = "HTTP " + std::to_string(resp.status);
    } catch (const TransportError& e) {
      failure = e.what();
    }
    if (attempt >= cfg_.max_retries) {
      throw TransportError("request to " + target + " failed after " +
                           std::to_string(attempt + 1) + " attempt(s): " + failure);
    }
    sleeper_(delay);
    delay *= 2.0;
  }
}

ChatExchange HttpChatBackend::complete(const std::vector<ChatMessage>& messages,
                                       const std::vector<ToolDefinition>& tools, CallPurpose) {
  if (messages.empty() || messages.front().role != Role::system) {
    throw ProtocolError("request must start with a system message");
  }
  const std::string body = serialize(messages, tools);
  const auto start = std::chrono::steady_clock::now();
  const HttpResponse resp = post_with_retries(body);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ChatExchange ex = cfg_.kind == BackendKind::openai_compat
                        ? parse_openai_response(resp.body, tools, cfg_.tool_mode)
                        : parse_ollama_response(resp.body, tools, cfg_.tool_mode);
  if (ex.usage) ex.usage->wall_seconds = wall;
  return ex;
}

void record_fixture(const BackendConfig& cfg, const std::vector<ChatMessage>& messages,
                    const std::vector<ToolDefinition>& tools, const std::string& out_prefix,
                    std::shared_ptr<HttpTransport> transport) {
  if (cfg.kind == BackendKind::replay) throw ConfigError("cannot record fixtures from replay");
  if (!transport) transport = make_http_transport();
  HttpChatBackend backend(cfg, transport, [](double) {});
  const std::string body = backend.serialize(messages, tools);
  HttpHeaders hdrs = backend.headers();
  const HttpResponse resp = transport->post(backend.url(), hdrs, body, cfg.request_timeout);
  if (resp.status == 401 || resp.status == 403) {
    throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(resp.status) + ")");
  }
  Json meta = Json::object();
  meta["protocol"] = to_string(cfg.kind);
  meta["url"] = backend.url();
  meta["status"] = resp.status;
  Json h = Json::object();
  for (const auto& [k, v] : hdrs) h[k] = (k == "Authorization") ? std::string("REDACTED") : v;
  meta["headers"] = std::move(h);
  write_file(out_prefix + ".req.json", body);
  write_file(out_prefix + ".resp.json", resp.body);
  write_file(out_prefix + ".meta.json", meta.dump(2) + "\n");
}

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& cfg, const std::string& task_id) {
  if (cfg.kind == BackendKind::replay) {
    const auto path = std::filesystem::path(cfg.scripts_dir) / (task_id + ".replay.json");
    return std::make_unique<ReplayBackend>(load_replay_script(path.string()));
  }
  return std::make_unique<HttpChatBackend>(cfg, make_http_transport());
}

}  // namespace geoflow
