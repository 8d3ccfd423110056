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

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geoflow/ledger.hpp"
#include "geoflow/tools.hpp"

namespace geoflow {

enum class BackendKind { openai_compat, ollama, replay };
enum class ToolMode { native, text };
/// How a run's cost is computed: token pricing or amortized local hardware.
enum class CostBasis { api, local };

std::string_view to_string(BackendKind kind) noexcept;
std::string_view to_string(CostBasis basis) noexcept;

struct BackendConfig {
  BackendKind kind = BackendKind::replay;
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  double temperature = 0.0;
  ToolMode tool_mode = ToolMode::native;
  double request_timeout = 120.0;
  int max_retries = 2;
  CostBasis cost_basis = CostBasis::api;
  std::string scripts_dir;  // replay only
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Reads a backend config document (JSON). Relative `scripts_dir` values are
/// resolved against `base_dir`.
BackendConfig parse_backend_config(std::string_view document, const std::string& base_dir = "");
BackendConfig load_backend_config(const std::string& path);

class BackendError : public Error {
 public:
  using Error::Error;
};
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};
class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Why the agent is calling the model. Not part of any wire format; the
/// replay backend uses it to select the scripted channel.
enum class CallPurpose { turn, reflect, confirm, route };

std::string_view to_string(CallPurpose purpose) noexcept;
CallPurpose purpose_from_string(std::string_view text);

struct ChatExchange {
  std::string assistant_text;
  std::vector<ToolCall> tool_calls;
  std::optional<UsageRecord> usage;  // absent when the backend reported none
  std::vector<std::string> diagnostics;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// `messages` must be non-empty and start with a system message.
  virtual ChatExchange complete(const std::vector<ChatMessage>& messages,
                                const std::vector<ToolDefinition>& tools,
                                CallPurpose purpose) = 0;
};

// ---------------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------------

std::string serialize_openai_request(const std::string& model,
                                     const std::vector<ChatMessage>& messages,
                                     const std::vector<ToolDefinition>& tools, double temperature,
                                     ToolMode mode);
std::string serialize_ollama_request(const std::string& model,
                                     const std::vector<ChatMessage>& messages,
                                     const std::vector<ToolDefinition>& tools, double temperature,
                                     ToolMode mode);

/// Throws ProtocolError on malformed bodies.
ChatExchange parse_openai_response(std::string_view body,
                                   const std::vector<ToolDefinition>& tools, ToolMode mode);
ChatExchange parse_ollama_response(std::string_view body,
                                   const std::vector<ToolDefinition>& tools, ToolMode mode);

/// Text-mode tool call extraction: `<tool_call>{...}</tool_call>` spans and
/// fenced code blocks holding `{"name": ..., "arguments": {...}}`. Calls to
/// tools absent from `tools` are dropped; each drop or unparseable span adds a
/// line to `log` when provided.
std::vector<ToolCall> extract_tool_calls_text(std::string_view assistant_text,
                                              const std::vector<ToolDefinition>& tools,
                                              std::vector<std::string>* log = nullptr);

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Throws TransportError when no response was received.
  virtual HttpResponse post(const std::string& url, const HttpHeaders& headers,
                            const std::string& body, double timeout_seconds) = 0;
};

std::unique_ptr<HttpTransport> make_http_transport();

using Sleeper = std::function<void(double seconds)>;

/// OpenAI-compatible or Ollama chat client.
class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(BackendConfig cfg, std::shared_ptr<HttpTransport> transport,
                  Sleeper sleeper = {});

  ChatExchange complete(const std::vector<ChatMessage>& messages,
                        const std::vector<ToolDefinition>& tools, CallPurpose purpose) override;

  std::string url() const;
  HttpHeaders headers() const;
  std::string serialize(const std::vector<ChatMessage>& messages,
                        const std::vector<ToolDefinition>& tools) const;

 private:
  HttpResponse post_with_retries(const std::string& body);

  BackendConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleeper_;
};

/// Sends one request and writes `<prefix>.req.json`, `<prefix>.resp.json`
/// (exact bodies) and `<prefix>.meta.json` (URL, status, headers with
/// credentials redacted). Nothing is written when the request fails.
void record_fixture(const BackendConfig& cfg, const std::vector<ChatMessage>& messages,
                    const std::vector<ToolDefinition>& tools, const std::string& out_prefix,
                    std::shared_ptr<HttpTransport> transport = nullptr);

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayEntry {
  CallPurpose channel = CallPurpose::turn;
  std::optional<std::string> key;  // hash of the last non-assistant message
  std::string assistant_text;
  std::vector<ToolCall> tool_calls;
  std::optional<UsageRecord> usage;
};

struct ReplayScript {
  std::string task_id;
  std::vector<ReplayEntry> entries;
};

Json to_json(const ReplayScript& script);
ReplayScript replay_script_from_json(const Json& j);
ReplayScript load_replay_script(const std::string& path);

/// Match key for keyed replay entries: FNV-1a of the message's canonical JSON
/// ({role, content, tool_call_id?}).
std::string message_key(const ChatMessage& msg);

/// Scripted double. Keyed entries are matched first; otherwise the next
/// unconsumed ordinal entry of the request's channel is returned.
class ReplayBackend final : public ChatBackend {
 public:
  explicit ReplayBackend(ReplayScript script);

  ChatExchange complete(const std::vector<ChatMessage>& messages,
                        const std::vector<ToolDefinition>& tools, CallPurpose purpose) override;

  std::size_t consumed() const noexcept;
  std::size_t remaining(CallPurpose channel) const noexcept;

 private:
  ReplayScript script_;
  std::vector<bool> used_;
};

/// Builds the backend for one task run. Replay configs load
/// `<scripts_dir>/<task_id>.replay.json`.
std::unique_ptr<ChatBackend> make_backend(const BackendConfig& cfg, const std::string& task_id);

}  // namespace geoflow
