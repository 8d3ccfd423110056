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

#include "geoflow/common.hpp"

namespace geoflow {

enum class ParamKind { string, integer, number, boolean, enumeration, array };

std::string_view to_string(ParamKind kind) noexcept;

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::string;
  bool required = false;
  std::string description;
  std::vector<std::string> enum_values;        // kind == enumeration
  ParamKind element_kind = ParamKind::number;  // kind == array
};

/// A function-calling schema entry. Names follow `[a-z][a-z0-9_]*`.
struct ToolDefinition {
  std::string name;
  std::string description;
  std::vector<ParamSpec> parameters;

  const ParamSpec* find_param(std::string_view param) const noexcept;
  /// JSON-Schema object for the `parameters` field of a tools entry.
  Json parameters_schema() const;
  /// Human-readable signature block used in text prompts.
  std::string render() const;
};

/// Throws Error when the name or parameter list is malformed.
void validate_definition(const ToolDefinition& def);
bool is_tool_identifier(std::string_view name) noexcept;

struct ToolCall {
  std::string call_id;
  std::string name;
  Json arguments = Json::object();

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

Json to_json(const ToolCall& call);
ToolCall tool_call_from_json(const Json& j);

enum class ToolStatus { ok, error };

struct ToolResult {
  std::string call_id;
  ToolStatus status = ToolStatus::ok;
  std::string payload;

  bool ok() const noexcept { return status == ToolStatus::ok; }
  friend bool operator==(const ToolResult&, const ToolResult&) = default;
};

/// Ordered set of tool definitions keyed by name.
class ToolRegistry {
 public:
  ToolRegistry() = default;
  explicit ToolRegistry(std::vector<ToolDefinition> defs);

  void add(ToolDefinition def);
  const ToolDefinition* find(std::string_view name) const noexcept;
  bool contains(std::string_view name) const noexcept { return find(name) != nullptr; }
  const std::vector<ToolDefinition>& definitions() const noexcept { return defs_; }
  std::size_t size() const noexcept { return defs_.size(); }

 private:
  std::vector<ToolDefinition> defs_;
};

/// Checks `arguments` against `def`. Returns a diagnostic on the first
/// violation (unknown argument, missing required argument, wrong kind).
std::optional<std::string> check_arguments(const ToolDefinition& def, const Json& arguments);

/// Coerces numeric strings to numbers for number/integer parameters when the
/// conversion is lossless. Other values pass through unchanged.
Json coerce_arguments(const ToolDefinition& def, const Json& arguments);

}  // namespace geoflow
