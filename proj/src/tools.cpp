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

#include "geoflow/tools.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace geoflow {

std::string_view to_string(ParamKind kind) noexcept {
  switch (kind) {
    case ParamKind::string: return "string";
    case ParamKind::integer: return "integer";
    case ParamKind::number: return "number";
    case ParamKind::boolean: return "boolean";
    case ParamKind::enumeration: return "enum";
    case ParamKind::array: return "array";
  }
  return "string";
}

bool is_tool_identifier(std::string_view name) noexcept {
  if (name.empty() || name[0] < 'a' || name[0] > 'z') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

const ParamSpec* ToolDefinition::find_param(std::string_view param) const noexcept {
  for (const auto& p : parameters) {
    if (p.name == param) return &p;
  }
  return nullptr;
}

namespace {

Json kind_schema(ParamKind kind) {
  Json j = Json::object();
  switch (kind) {
    case ParamKind::integer: j["type"] = "integer"; break;
    case ParamKind::number: j["type"] = "number"; break;
    case ParamKind::boolean: j["type"] = "boolean"; break;
    default: j["type"] = "string"; break;
  }
  return j;
}

}  // namespace

Json ToolDefinition::parameters_schema() const {
  Json properties = Json::object();
  Json required = Json::array();
  for (const auto& p : parameters) {
    Json prop = Json::object();
    if (p.kind == ParamKind::array) {
      prop["type"] = "array";
      prop["items"] = kind_schema(p.element_kind);
    } else {
      prop = kind_schema(p.kind);
      if (p.kind == ParamKind::enumeration) prop["enum"] = p.enum_values;
    }
    prop["description"] = p.description;
    properties[p.name] = std::move(prop);
    if (p.required) required.push_back(p.name);
  }
  Json schema = Json::object();
  schema["type"] = "object";
  schema["properties"] = std::move(properties);
  schema["required"] = std::move(required);
  return schema;
}

std::string ToolDefinition::render() const {
  std::ostringstream out;
  out << name << "(";
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    const auto& p = parameters[i];
    if (i) out << ", ";
    out << p.name << ": ";
    if (p.kind == ParamKind::array) {
      out << "array<" << to_string(p.element_kind) << ">";
    } else if (p.kind == ParamKind::enumeration) {
      out << "one of {";
      for (std::size_t k = 0; k < p.enum_values.size(); ++k) {
        out << (k ? ", " : "") << p.enum_values[k];
      }
      out << "}";
    } else {
      out << to_string(p.kind);
    }
    if (!p.required) out << " (optional)";
  }
  out << ")\n  " << description;
  for (const auto& p : parameters) {
    if (!p.description.empty()) out << "\n  - " << p.name << ": " << p.description;
  }
  return out.str();
}

void validate_definition(const ToolDefinition& def) {
  if (!is_tool_identifier(def.name)) {
    throw Error("invalid tool name '" + def.name + "'");
  }
  std::set<std::string> seen;
  for (const auto& p : def.parameters) {
    if (p.name.empty()) throw Error("tool '" + def.name + "' has an unnamed parameter");
    if (!seen.insert(p.name).second) {
      throw Error("tool '" + def.name + "' declares parameter '" + p.name + "' twice");
    }
    if (p.kind == ParamKind::enumeration && p.enum_values.empty()) {
      throw Error("enum parameter '" + p.name + "' of '" + def.name + "' has no values");
    }
  }
}

Json to_json(const ToolCall& call) {
  Json j = Json::object();
  j["call_id"] = call.call_id;
  j["name"] = call.name;
  j["arguments"] = call.arguments;
  return j;
}

ToolCall tool_call_from_json(const Json& j) {
  ToolCall call;
  call.call_id = j.value("call_id", std::string{});
  call.name = j.at("name").get<std::string>();
  if (j.contains("arguments")) call.arguments = j.at("arguments");
  if (!call.arguments.is_object()) throw Error("tool call arguments must be an object");
  return call;
}

ToolRegistry::ToolRegistry(std::vector<ToolDefinition> defs) {
  for (auto& d : defs) add(std::move(d));
}

void ToolRegistry::add(ToolDefinition def) {
  validate_definition(def);
  if (contains(def.name)) throw Error("tool '" + def.name + "' registered twice");
  defs_.push_back(std::move(def));
}

const ToolDefinition* ToolRegistry::find(std::string_view name) const noexcept {
  for (const auto& d : defs_) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

namespace {

bool value_has_kind(const Json& v, ParamKind kind, const ParamSpec& spec) {
  switch (kind) {
    case ParamKind::string: return v.is_string();
    case ParamKind::integer:
      return v.is_number_integer() ||
             (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
    case ParamKind::number: return v.is_number();
    case ParamKind::boolean: return v.is_boolean();
    case ParamKind::enumeration:
      return v.is_string() && std::find(spec.enum_values.begin(), spec.enum_values.end(),
                                        v.get<std::string>()) != spec.enum_values.end();
    case ParamKind::array: return v.is_array();
  }
  return false;
}

std::string expected_list(const ToolDefinition& def) {
  std::string out;
  for (const auto& p : def.parameters) {
    if (!out.empty()) out += ", ";
    out += p.name;
  }
  return out;
}

std::optional<Json> parse_numeric_string(const std::string& s, bool integer_only) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  if (integer_only) {
    long long value = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
    return Json(value);
  }
  double value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return Json(value);
}

}  // namespace

std::optional<std::string> check_arguments(const ToolDefinition& def, const Json& arguments) {
  if (!arguments.is_object()) return "arguments must be a JSON object";
  if (arguments.contains("_raw_arguments")) {
    return "arguments for " + def.name + " were not valid JSON";
  }
  for (const auto& [key, value] : arguments.items()) {
    const ParamSpec* spec = def.find_param(key);
    if (!spec) {
      return "unknown argument '" + key + "' for " + def.name + " (expected: " +
             expected_list(def) + ")";
    }
    if (!value_has_kind(value, spec->kind, *spec)) {
      if (spec->kind == ParamKind::enumeration) {
        std::string allowed;
        for (const auto& v : spec->enum_values) allowed += (allowed.empty() ? "" : ", ") + v;
        return "argument '" + key + "' of " + def.name + " must be one of {" + allowed + "}";
      }
      return "argument '" + key + "' of " + def.name + " must be " +
             std::string(to_string(spec->kind));
    }
    if (spec->kind == ParamKind::array) {
      for (const auto& element : value) {
        if (!value_has_kind(element, spec->element_kind, *spec)) {
          return "elements of '" + key + "' must be " + std::string(to_string(spec->element_kind));
        }
      }
    }
  }
  for (const auto& p : def.parameters) {
    if (p.required && !arguments.contains(p.name)) {
      return "missing required argument '" + p.name + "' for " + def.name;
    }
  }
  return std::nullopt;
}

Json coerce_arguments(const ToolDefinition& def, const Json& arguments) {
  if (!arguments.is_object()) return arguments;
  Json out = Json::object();
  for (const auto& [key, value] : arguments.items()) {
    const ParamSpec* spec = def.find_param(key);
    Json coerced = value;
    if (spec && value.is_string() &&
        (spec->kind == ParamKind::number || spec->kind == ParamKind::integer)) {
      if (auto n = parse_numeric_string(value.get<std::string>(),
                                        spec->kind == ParamKind::integer)) {
        coerced = *n;
      }
    } else if (spec && spec->kind == ParamKind::array && value.is_array() &&
               (spec->element_kind == ParamKind::number ||
                spec->element_kind == ParamKind::integer)) {
      for (auto& element : coerced) {
        if (!element.is_string()) continue;
        if (auto n = parse_numeric_string(element.get<std::string>(),
                                          spec->element_kind == ParamKind::integer)) {
          element = *n;
        }
      }
    }
    out[key] = std::move(coerced);
  }
  return out;
}

}  // namespace geoflow
