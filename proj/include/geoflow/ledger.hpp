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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoflow/tools.hpp"

namespace geoflow {

enum class Role { system, user, assistant, tool };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view text);

/// Token and latency accounting for one backend exchange.
struct UsageRecord {
  std::int64_t input_tokens = 0;   // non-cached prompt tokens
  std::int64_t cached_tokens = 0;
  std::int64_t output_tokens = 0;
  double wall_seconds = 0.0;

  friend bool operator==(const UsageRecord&, const UsageRecord&) = default;
};

Json to_json(const UsageRecord& usage);
UsageRecord usage_from_json(const Json& j);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  std::optional<std::vector<ToolCall>> tool_calls;  // assistant only
  std::optional<std::string> tool_call_id;          // tool only
  std::int64_t turn_index = 0;
  std::optional<UsageRecord> usage;                 // assistant only

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

Json to_json(const ChatMessage& msg);
ChatMessage message_from_json(const Json& j);

class LedgerError : public Error {
 public:
  using Error::Error;
};
class RoleViolation : public LedgerError {
 public:
  using LedgerError::LedgerError;
};
class OrderViolation : public LedgerError {
 public:
  using LedgerError::LedgerError;
};

struct TokenTotals {
  std::int64_t input_tokens = 0;
  std::int64_t cached_tokens = 0;
  std::int64_t output_tokens = 0;
  bool estimated = false;

  std::int64_t total() const noexcept { return input_tokens + cached_tokens + output_tokens; }
  TokenTotals& operator+=(const TokenTotals& other) noexcept;
  friend TokenTotals operator+(TokenTotals a, const TokenTotals& b) noexcept { return a += b; }
  friend bool operator==(const TokenTotals&, const TokenTotals&) = default;
};

/// Fallback token count for text whose usage was not reported:
/// ceil(words * 4 / 3).
std::int64_t estimate_tokens(std::string_view text) noexcept;

/// The append-only message history of one run.
class Ledger {
 public:
  /// Validates role placement and turn ordering, then appends.
  /// Throws RoleViolation or OrderViolation; the ledger is unchanged on throw.
  void append(ChatMessage msg);

  /// Convenience: appends with turn_index = next_turn_index().
  const ChatMessage& push(Role role, std::string content);
  const ChatMessage& push_assistant(std::string content, std::vector<ToolCall> calls,
                                    std::optional<UsageRecord> usage);
  const ChatMessage& push_tool(std::string call_id, std::string content);

  std::int64_t next_turn_index() const noexcept {
    return messages_.empty() ? 0 : messages_.back().turn_index + 1;
  }
  const std::vector<ChatMessage>& messages() const noexcept { return messages_; }
  std::size_t size() const noexcept { return messages_.size(); }
  bool empty() const noexcept { return messages_.empty(); }

  /// Line-delimited JSON transcript, one message per line, LF endings.
  std::string to_jsonl() const;
  static Ledger from_jsonl(std::string_view text);

 private:
  std::vector<ChatMessage> messages_;
};

/// Sums reported usage over all exchanges. An exchange is a run of
/// non-assistant messages closed by an assistant message; when that assistant
/// message lacks usage, each message in the exchange contributes
/// estimate_tokens (input side for prompts, output side for the reply) and the
/// result is flagged as estimated.
TokenTotals token_totals(const Ledger& ledger);

}  // namespace geoflow
