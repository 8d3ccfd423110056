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

#include <algorithm>
#include <charconv>
#include <sstream>

#include "geoflow/eval.hpp"

namespace geoflow {

// A small reader for the pricing document: `[section]` headers, `key = number`
// pairs and `#` comments. Model sections are `[models."name"]` or
// `[models.name]`.

namespace {

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double parse_number(const std::string& text, std::size_t line_no) {
  std::string t = trim(text);
  t.erase(std::remove(t.begin(), t.end(), '_'), t.end());
  double v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw PricingError("pricing line " + std::to_string(line_no) + ": '" + text +
                       "' is not a number");
  }
  return v;
}

}  // namespace

PricingTable parse_pricing(std::string_view text) {
  PricingTable table;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  enum class Section { none, model, local } section = Section::none;
  std::string model;
  auto fail = [&](const std::string& msg) {
    throw PricingError("pricing line " + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (name == "local") {
        section = Section::local;
        if (!table.local) table.local = LocalRates{};
      } else if (name.rfind("models.", 0) == 0) {
        model = trim(name.substr(7));
        if (model.size() >= 2 && model.front() == '"' && model.back() == '"') {
          model = model.substr(1, model.size() - 2);
        }
        if (model.empty()) fail("empty model name");
        if (table.models.count(model)) fail("duplicate model '" + model + "'");
        table.models[model] = ModelRates{};
        section = Section::model;
      } else {
        fail("unknown section [" + name + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const double value = parse_number(line.substr(eq + 1), line_no);
    if (value < 0) fail("'" + key + "' must not be negative");
    if (section == Section::model) {
      ModelRates& r = table.models[model];
      if (key == "input") r.input = value;
      else if (key == "cached") r.cached = value;
      else if (key == "output") r.output = value;
      else fail("unknown model rate '" + key + "'");
    } else if (section == Section::local) {
      if (key == "hourly_rate") {
        table.local->hourly_rate = value;
      } else if (key == "capacity") {
        if (value < 1 || value != static_cast<double>(static_cast<int>(value))) {
          fail("capacity must be an integer >= 1");
        }
        table.local->capacity = static_cast<int>(value);
      } else {
        fail("unknown local key '" + key + "'");
      }
    } else {
      fail("key outside of a section");
    }
  }
  return table;
}

PricingTable load_pricing(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw PricingError(e.what());
  }
  return parse_pricing(text);
}

}  // namespace geoflow
