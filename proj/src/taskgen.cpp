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

#include "geoflow/taskgen.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>

namespace geoflow {

namespace {

const std::set<std::string> kIntents{"Vision", "Forest", "Urban", "Climate", "Agriculture"};
const std::set<std::string> kHandleProducers{"load_product", "filter_spatial", "filter_temporal",
                                             "run_detection", "filter_category"};
constexpr std::string_view kPrevHandle = "@prev";
constexpr double kAnswerTolerance = 0.10;

AnswerRule answer_rule_from_string(const std::string& s) {
  if (s == "detections") return AnswerRule::detections;
  if (s == "object_count") return AnswerRule::object_count;
  if (s == "series") return AnswerRule::series;
  if (s == "correlate") return AnswerRule::correlate;
  throw TemplateError("unknown answer rule '" + s + "'");
}

std::vector<std::string> string_list(const Json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
  return out;
}

/// Slot names referenced as `{name}` in text.
std::vector<std::string> placeholders(const std::string& text) {
  static const std::regex re(R"(\{([a-z_]+)\})");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator();
       ++it) {
    out.push_back((*it)[1].str());
  }
  return out;
}

void collect_placeholders(const Json& j, std::set<std::string>& out) {
  if (j.is_string()) {
    for (auto& p : placeholders(j.get<std::string>())) out.insert(p);
  } else if (j.is_structured()) {
    for (const auto& v : j) collect_placeholders(v, out);
  }
}

/// Query-only slots and the trajectory slot each one renders.
std::string source_slot(const std::string& slot) {
  if (slot == "month_name") return "start_date";
  if (slot == "bbox_text") return "bbox";
  return slot;
}

std::string slot_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return format_number(v.get<double>());
  if (v.is_array()) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ", ";
      s += slot_text(v[i]);
    }
    return s + "]";
  }
  return v.dump();
}

Json substitute(const Json& pattern, const SlotValues& slots, const std::string& prev_handle,
                const std::string& where) {
  if (pattern.is_string()) {
    const std::string s = pattern.get<std::string>();
    if (s == kPrevHandle) {
      if (prev_handle.empty()) throw TemplateError(where + ": @prev used before any handle exists");
      return prev_handle;
    }
    auto names = placeholders(s);
    if (names.size() == 1 && s == "{" + names[0] + "}") {
      auto it = slots.find(names[0]);
      if (it == slots.end()) throw SlotError(where + ": slot '" + names[0] + "' is not bound");
      return it->second;
    }
    std::string out = s;
    for (const auto& n : names) {
      auto it = slots.find(n);
      if (it == slots.end()) throw SlotError(where + ": slot '" + n + "' is not bound");
      const std::string key = "{" + n + "}";
      for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key)) {
        out.replace(pos, key.size(), slot_text(it->second));
      }
    }
    return out;
  }
  if (pattern.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : pattern.items()) out[k] = substitute(v, slots, prev_handle, where);
    return out;
  }
  if (pattern.is_array()) {
    Json out = Json::array();
    for (const auto& v : pattern) out.push_back(substitute(v, slots, prev_handle, where));
    return out;
  }
  return pattern;
}

std::string render_query(const TaskTemplate& t, const SlotValues& slots) {
  return substitute(Json(t.query), slots, "x", t.template_id + ".query").get<std::string>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

TaskTemplate template_from_json(const Json& j) {
  TaskTemplate t;
  try {
    t.template_id = j.at("template_id").get<std::string>();
    if (j.contains("intent") && !j.at("intent").is_null()) t.intent = j.at("intent").get<std::string>();
    t.query = j.at("query").get<std::string>();
    t.probe = j.value("probe", false);
    const Json& s = j.value("slots", Json::object());
    t.slots.products = string_list(s, "product");
    t.slots.categories = string_list(s, "category");
    t.slots.variables = string_list(s, "variable");
    t.slots.aggregates = string_list(s, "aggregate");
    t.slots.region = s.value("region", false);
    t.slots.bbox = s.value("bbox", std::string{});
    t.slots.dates = s.value("dates", std::string{});
    for (const auto& step : j.at("trajectory")) {
      TemplateStep st;
      st.name = step.at("name").get<std::string>();
      st.stage = step.value("stage", std::string{});
      if (step.contains("args")) st.args = step.at("args");
      t.trajectory.push_back(std::move(st));
    }
    t.answer = answer_rule_from_string(j.at("answer").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError(std::string("malformed template: ") + e.what());
  }
  validate_template(t);
  return t;
}

void validate_template(const TaskTemplate& t) {
  const std::string id = t.template_id.empty() ? std::string("<unnamed>") : t.template_id;
  if (t.template_id.empty()) throw TemplateError("template without template_id");
  if (t.intent && !kIntents.count(*t.intent)) {
    throw TemplateError(id + ": unknown intent '" + *t.intent + "'");
  }
  if (t.trajectory.empty()) throw TemplateError(id + ": empty trajectory");
  if (!t.slots.bbox.empty() && t.slots.bbox != "region" && t.slots.bbox != "empty") {
    throw TemplateError(id + ": bbox rule must be 'region' or 'empty'");
  }
  if (!t.slots.dates.empty() && t.slots.dates != "month" && t.slots.dates != "window") {
    throw TemplateError(id + ": dates rule must be 'month' or 'window'");
  }
  if (t.slots.bbox == "region" && !t.slots.region) {
    throw TemplateError(id + ": bbox 'region' needs the region slot");
  }
  const ToolRegistry& reg = sandbox_registry();
  std::set<std::string> used;
  for (std::size_t i = 0; i < t.trajectory.size(); ++i) {
    const auto& step = t.trajectory[i];
    const ToolDefinition* def = reg.find(step.name);
    const std::string where = id + ".trajectory[" + std::to_string(i) + "]";
    if (!def) throw TemplateError(where + ": unknown tool '" + step.name + "'");
    if (!step.args.is_object()) throw TemplateError(where + ": args must be an object");
    for (const auto& [k, _] : step.args.items()) {
      if (!def->find_param(k)) {
        throw TemplateError(where + ": tool " + step.name + " has no parameter '" + k + "'");
      }
    }
    collect_placeholders(step.args, used);
  }
  for (const auto& p : placeholders(t.query)) {
    if (!used.count(source_slot(p))) {
      throw TemplateError(id + ": query slot '" + p + "' is not consumed by the trajectory");
    }
  }
}

std::vector<TaskTemplate> parse_templates(std::string_view document) {
  Json doc = Json::parse(document, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("templates")) {
    throw TemplateError("template document must be an object with a 'templates' array");
  }
  std::vector<TaskTemplate> out;
  std::set<std::string> ids;
  for (const auto& j : doc.at("templates")) {
    out.push_back(template_from_json(j));
    if (!ids.insert(out.back().template_id).second) {
      throw TemplateError("duplicate template_id '" + out.back().template_id + "'");
    }
  }
  return out;
}

std::vector<TaskTemplate> load_templates(const std::string& path) {
  return parse_templates(read_file(path));
}

// ---------------------------------------------------------------------------
// Gold derivation
// ---------------------------------------------------------------------------

std::vector<CallMatcher> derive_gold_trajectory(const TaskTemplate& t, const SlotValues& slots) {
  std::vector<CallMatcher> out;
  std::string prev;
  int handles = 0;
  for (std::size_t i = 0; i < t.trajectory.size(); ++i) {
    const auto& step = t.trajectory[i];
    CallMatcher m;
    m.name = step.name;
    m.stage = step.stage;
    m.required_args =
        substitute(step.args, slots, prev, t.template_id + ".trajectory[" + std::to_string(i) + "]");
    for (const auto& [k, _] : m.required_args.items()) {
      if (is_coordinate_param(k)) m.arg_tolerances[k] = kCoordinateTolerance;
    }
    if (m.name == kFinalAnswerTool && m.required_args.contains("value")) {
      m.arg_tolerances["value"] = kAnswerTolerance;
    }
    if (kHandleProducers.count(m.name)) prev = "h" + std::to_string(++handles);
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

struct ImageFilter {
  std::optional<std::string> product;
  std::optional<GeoBox> box;
  std::optional<DayNumber> start, end;

  bool keep(const CatalogImage& img) const {
    if (product && img.product != *product) return false;
    if (box && !(img.lon >= box->west && img.lon <= box->east && img.lat >= box->south &&
                 img.lat <= box->north)) {
      return false;
    }
    if (start && img.date < *start) return false;
    if (end && img.date > *end) return false;
    return true;
  }
};

GeoBox box_from(const Json& a) {
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
}

ImageFilter image_filter(const TaskTemplate& t, const SlotValues& slots, const World& world) {
  ImageFilter f;
  if (auto it = slots.find("product"); it != slots.end()) f.product = it->second.get<std::string>();
  if (auto it = slots.find("bbox"); it != slots.end()) {
    f.box = box_from(it->second);
  } else if (auto r = slots.find("region"); r != slots.end()) {
    const bool spatial = std::any_of(t.trajectory.begin(), t.trajectory.end(),
                                     [](const TemplateStep& s) { return s.name == "filter_spatial"; });
    if (spatial) {
      for (const auto& reg : world.regions()) {
        if (reg.name == r->second.get<std::string>()) f.box = reg.box;
      }
    }
  }
  if (auto it = slots.find("start_date"); it != slots.end()) {
    f.start = parse_date(it->second.get<std::string>());
  }
  if (auto it = slots.find("end_date"); it != slots.end()) {
    f.end = parse_date(it->second.get<std::string>());
  }
  return f;
}

const std::string& slot_string(const SlotValues& slots, const std::string& name,
                               const std::string& template_id) {
  auto it = slots.find(name);
  if (it == slots.end() || !it->second.is_string()) {
    throw SlotError(template_id + ": slot '" + name + "' is not bound");
  }
  return it->second.get_ref<const std::string&>();
}

}  // namespace

namespace {

/// Gold answer plus the number of catalog rows or objects it was derived from.
GoldAnswer derive_answer(const TaskTemplate& t, const SlotValues& slots, const World& world,
                         std::size_t& support) {
  GoldAnswer g;
  support = 0;
  switch (t.answer) {
    case AnswerRule::detections:
    case AnswerRule::object_count: {
      const std::string& category = slot_string(slots, "category", t.template_id);
      const ImageFilter f = image_filter(t, slots, world);
      for (const auto& img : world.images()) {
        if (!f.keep(img)) continue;
        for (std::size_t k = 0; k < img.objects.size(); ++k) {
          if (img.objects[k].category != category) continue;
          g.detections.push_back(
              {img.image_id + "_o" + std::to_string(k), img.image_id, category, img.objects[k].bbox});
        }
      }
      g.value = static_cast<double>(g.detections.size());
      support = g.detections.size();
      if (t.answer == AnswerRule::object_count) {
        g.kind = AnswerKind::numeric;
        g.detections.clear();
      } else {
        g.kind = AnswerKind::detections;
      }
      g.tolerance = kAnswerTolerance;
      return g;
    }
    case AnswerRule::series: {
      const std::string& region = slot_string(slots, "region", t.template_id);
      const std::string& variable = slot_string(slots, "variable", t.template_id);
      const std::string& aggregate = slot_string(slots, "aggregate", t.template_id);
      const DayNumber start = parse_date(slot_string(slots, "start_date", t.template_id));
      const DayNumber end = parse_date(slot_string(slots, "end_date", t.template_id));
      std::vector<std::pair<DayNumber, double>> rows;
      for (const auto& row : world.series()) {
        if (row.region == region && row.variable == variable && row.date >= start && row.date <= end) {
          rows.emplace_back(row.date, row.value);
        }
      }
      std::sort(rows.begin(), rows.end());
      support = rows.size();
      g.kind = AnswerKind::numeric;
      g.tolerance = kAnswerTolerance;
      g.detections.clear();
      if (rows.empty()) {
        g.value = 0;
        return g;
      }
      double v = aggregate == "min" ? rows[0].second : aggregate == "max" ? rows[0].second : 0.0;
      for (const auto& [_, x] : rows) {
        if (aggregate == "sum" || aggregate == "mean") v += x;
        if (aggregate == "min") v = std::min(v, x);
        if (aggregate == "max") v = std::max(v, x);
      }
      if (aggregate == "mean") v /= static_cast<double>(rows.size());
      g.value = v;
      return g;
    }
    case AnswerRule::correlate: {
      const ImageFilter f = image_filter(t, slots, world);
      double total = 0;
      for (const auto& img : world.images()) {
        if (!f.keep(img)) continue;
        const Region* region = nullptr;
        for (const auto& r : world.regions()) {
          if (img.lon >= r.box.west && img.lon <= r.box.east && img.lat >= r.box.south &&
              img.lat <= r.box.north) {
            region = &r;
            break;
          }
        }
        if (!region) continue;
        std::optional<double> population;
        for (const auto& row : world.series()) {
          if (row.region == region->name && row.variable == "population" && row.date == img.date) {
            population = row.value;
            break;
          }
        }
        if (!population) continue;
        for (const auto& obj : img.objects) {
          if (obj.category == "building") {
            total += *population;
            ++support;
          }
        }
      }
      g.kind = AnswerKind::numeric;
      g.value = total;
      g.tolerance = kAnswerTolerance;
      return g;
    }
  }
  return g;
}

}  // namespace

GoldAnswer derive_gold_answer(const TaskTemplate& t, const SlotValues& slots, const World& world) {
  std::size_t support = 0;
  return derive_answer(t, slots, world, support);
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

struct MonthWindow {
  const char* name;
  unsigned month;
  unsigned last_day;
};

constexpr std::array<MonthWindow, 3> kMonths{{{"April", 4, 30}, {"May", 5, 31}, {"June", 6, 30}}};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

/// A 2x2 degree box containing no image center and touching no region.
std::optional<Json> empty_box(Rng& rng, const World& world) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double w = round2(rng.uniform(-178.0, 176.0));
    const double s = round2(rng.uniform(-58.0, 66.0));
    const GeoBox box{w, s, round2(w + 2.0), round2(s + 2.0)};
    const bool hits_image = std::any_of(world.images().begin(), world.images().end(),
                                        [&](const CatalogImage& img) {
                                          return box.contains(img.lat, img.lon);
                                        });
    const bool hits_region = std::any_of(
        world.regions().begin(), world.regions().end(), [&](const Region& r) {
          return !(r.box.east < box.west || r.box.west > box.east || r.box.north < box.south ||
                   r.box.south > box.north);
        });
    if (!hits_image && !hits_region) return Json(box.as_array());
  }
  return std::nullopt;
}

std::optional<SlotValues> sample_slots(const TaskTemplate& t, const World& world, Rng& rng) {
  SlotValues v;
  if (!t.slots.products.empty()) v["product"] = pick(rng, t.slots.products);
  if (t.slots.region) {
    const Region& r = world.regions()[rng.below(world.regions().size())];
    v["region"] = r.name;
    if (t.slots.bbox == "region") v["bbox"] = Json(r.box.as_array());
  }
  if (t.slots.bbox == "empty") {
    auto box = empty_box(rng, world);
    if (!box) return std::nullopt;
    v["bbox"] = *box;
  }
  if (v.count("bbox")) v["bbox_text"] = slot_text(v["bbox"]);
  if (t.slots.dates == "month") {
    const MonthWindow& m = kMonths[rng.below(kMonths.size())];
    v["start_date"] = format_date(days_from_civil(2020, m.month, 1));
    v["end_date"] = format_date(days_from_civil(2020, m.month, m.last_day));
    v["month_name"] = std::string(m.name) + " 2020";
  } else if (t.slots.dates == "window") {
    const DayNumber start = epoch_start() + static_cast<DayNumber>(rng.below(kEpochDays - 7));
    const DayNumber end = std::min<DayNumber>(start + rng.range(7, 30) - 1,
                                              epoch_start() + kEpochDays - 1);
    v["start_date"] = format_date(start);
    v["end_date"] = format_date(end);
  }
  if (!t.slots.categories.empty()) v["category"] = pick(rng, t.slots.categories);
  if (!t.slots.variables.empty()) v["variable"] = pick(rng, t.slots.variables);
  if (!t.slots.aggregates.empty()) v["aggregate"] = pick(rng, t.slots.aggregates);
  return v;
}

}  // namespace

std::vector<TaskSpec> generate_tasks(const World& world, const CatalogParams& scenario,
                                     const std::vector<TaskTemplate>& templates,
                                     const TaskGenOptions& options) {
  if (world.regions().empty()) throw TemplateError("catalog has no regions");
  std::vector<TaskSpec> tasks;
  for (const auto& t : templates) {
    validate_template(t);
    Rng rng(mix64(options.seed ^ fnv1a64(t.template_id)));
    std::set<std::string> queries;
    std::size_t made = 0;
    for (int attempt = 0; made < options.n_per_template && attempt < 500; ++attempt) {
      auto slots = sample_slots(t, world, rng);
      if (!slots) continue;
      std::size_t support = 0;
      GoldAnswer gold = derive_answer(t, *slots, world, support);
      if (t.probe ? support != 0 : support == 0) continue;
      const std::string query = render_query(t, *slots);
      if (!queries.insert(query).second) continue;
      (*slots)["answer_value"] = gold.value;
      // Only numeric answers carry a value on disk.
      if (gold.kind != AnswerKind::numeric) gold.value = 0.0;

      TaskSpec task;
      char id[16];
      std::snprintf(id, sizeof(id), "-%02zu", made + 1);
      task.task_id = t.template_id + id;
      task.template_id = t.template_id;
      task.query = query;
      task.intent_gold = t.intent;
      task.gold_trajectory = derive_gold_trajectory(t, *slots);
      task.gold_answer = std::move(gold);
      task.scenario = scenario;
      validate_task(task);
      tasks.push_back(std::move(task));
      ++made;
    }
    if (made < options.n_per_template) {
      throw TemplateError(t.template_id + ": could only draw " + std::to_string(made) + " of " +
                          std::to_string(options.n_per_template) + " distinct non-vacuous variants");
    }
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Gold replay
// ---------------------------------------------------------------------------

std::vector<ToolCall> gold_calls(const TaskSpec& task) {
  std::vector<ToolCall> calls;
  for (std::size_t i = 0; i < task.gold_trajectory.size(); ++i) {
    const CallMatcher& m = task.gold_trajectory[i];
    ToolCall c;
    c.call_id = "call_" + std::to_string(i + 1);
    c.name = m.name;
    if (m.name == kFinalAnswerTool && !m.required_args.contains("answer")) {
      c.arguments = Json::object();
      const std::string value =
          m.required_args.contains("value") ? slot_text(m.required_args.at("value")) : "";
      c.arguments["answer"] = task.gold_answer.kind == AnswerKind::detections
                                  ? "Rendered " + value + " detections to the map."
                                  : "The result is " + value + ".";
      for (const auto& [k, v] : m.required_args.items()) c.arguments[k] = v;
    } else {
      c.arguments = m.required_args;
    }
    calls.push_back(std::move(c));
  }
  return calls;
}

GoldReplay interpret_gold(const TaskSpec& task, const World& world) {
  SessionOptions opts;
  opts.task_id = task.task_id;
  Session session(world, opts);
  GoldReplay out;
  for (const auto& call : gold_calls(task)) {
    ToolOutcome o = session.execute(call);
    if (o.result.ok() && call.name != kFinalAnswerTool) {
      Json payload = Json::parse(o.result.payload, nullptr, false);
      if (payload.is_object()) {
        if (payload.contains("count") && payload.at("count").is_number()) {
          out.last_value = payload.at("count").get<double>();
        } else if (payload.contains("value") && payload.at("value").is_number()) {
          out.last_value = payload.at("value").get<double>();
        }
      }
    }
    out.outcomes.push_back(std::move(o));
  }
  out.answer = session.answer();
  out.artifacts = session.artifact_contents();
  return out;
}

namespace {

struct PlannedTurn {
  std::vector<ToolCall> calls;
  std::string next_stage;  // empty outside stateflow
  bool terminate = false;
  bool premature = false;
};

UsageRecord synthetic_usage(std::size_t ordinal, std::size_t calls) {
  UsageRecord u;
  u.input_tokens = 180 + 35 * static_cast<std::int64_t>(ordinal);
  u.cached_tokens = ordinal > 0 ? 64 : 0;
  u.output_tokens = 24 + 18 * static_cast<std::int64_t>(calls);
  u.wall_seconds = 0.5 + 0.25 * static_cast<double>(calls);
  return u;
}

std::string turn_text(const PlannedTurn& t) {
  std::string text;
  if (t.calls.empty()) {
    text = "Moving on.";
  } else {
    text = "Calling";
    for (std::size_t i = 0; i < t.calls.size(); ++i) text += (i ? ", " : " ") + t.calls[i].name;
    text += ".";
  }
  if (t.terminate) text += t.premature ? " That should be all. TERMINATE" : " All steps are done. TERMINATE";
  if (!t.next_stage.empty()) text += "\nCURRENT_STAGE = " + t.next_stage;
  return text;
}

std::string terminal_successor(const WorkflowSpec& wf, const std::string& state) {
  auto it = wf.transitions.find(state);
  if (it != wf.transitions.end()) {
    for (const auto& s : it->second) {
      const StateSpec* spec = wf.find_state(s);
      if (spec && spec->is_terminal) return s;
    }
  }
  throw TemplateError("state " + state + " has no terminal successor to finish in");
}

void require_edge(const WorkflowSpec& wf, const std::string& from, const std::string& to,
                  const std::string& task_id) {
  if (from == to) return;
  if (!validate_transition(wf, from, to, TransitionMode::strict).accepted()) {
    throw TemplateError(task_id + ": workflow " + wf.name + " has no edge " + from + " -> " + to);
  }
}

}  // namespace

ReplayScript build_replay_script(const TaskSpec& task, const WorkflowSpec& wf,
                                 const ScriptOptions& options) {
  ReplayScript script;
  script.task_id = task.task_id;
  const std::vector<ToolCall> calls = gold_calls(task);
  std::size_t ordinal = 0;
  auto push = [&](CallPurpose channel, std::string text, std::vector<ToolCall> entry_calls) {
    ReplayEntry e;
    e.channel = channel;
    e.usage = synthetic_usage(ordinal++, entry_calls.size());
    e.assistant_text = std::move(text);
    e.tool_calls = std::move(entry_calls);
    script.entries.push_back(std::move(e));
  };

  // Plan the turns: one per run of consecutive same-stage calls.
  std::string state = wf.initial;
  if (!wf.intent_routes.empty()) {
    const std::string intent = task.intent_gold.value_or(wf.default_intent);
    const IntentRoute* route = wf.find_route(intent);
    if (!route) throw TemplateError(task.task_id + ": workflow has no route for " + intent);
    push(CallPurpose::route, "USER_INTENT = " + route->intent, {});
    state = route->entry_state;
  }
  std::vector<PlannedTurn> plan;
  std::vector<std::string> in_state;  // state each planned turn runs in
  for (std::size_t i = 0; i < calls.size();) {
    const std::string& stage = task.gold_trajectory[i].stage;
    if (!wf.find_state(stage)) {
      throw TemplateError(task.task_id + ": gold step " + std::to_string(i) + " has unknown stage '" +
                          stage + "'");
    }
    if (stage != state) {
      plan.push_back({});
      in_state.push_back(state);
      state = stage;
    }
    const auto allowed = tools_for_state(wf, stage, sandbox_registry());
    PlannedTurn turn;
    for (; i < calls.size() && task.gold_trajectory[i].stage == stage; ++i) {
      const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                  [&](const ToolDefinition& d) { return d.name == calls[i].name; });
      if (!ok) {
        throw TemplateError(task.task_id + ": tool " + calls[i].name + " is not allowed in " + stage);
      }
      turn.calls.push_back(calls[i]);
    }
    plan.push_back(std::move(turn));
    in_state.push_back(stage);
  }
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const bool last = k + 1 == plan.size();
    plan[k].next_stage = last ? terminal_successor(wf, in_state[k]) : in_state[k + 1];
    plan[k].terminate = last;
    require_edge(wf, in_state[k], plan[k].next_stage, task.task_id);
  }
  if (options.premature_terminate && plan.size() >= 2) {
    PlannedTurn& early = plan[std::min<std::size_t>(1, plan.size() - 2)];
    early.terminate = true;
    early.premature = true;
  }

  // Emit the turns, mirroring the agent's fault handling: a failed call stops
  // its turn, one reflection re-issues the failed and skipped calls, and they
  // run in a correction turn. Once a turn needed corrections its stage tag and
  // TERMINATE are repeated in a follow-up turn.
  std::uint64_t call_index = 0;
  for (const PlannedTurn& turn : plan) {
    push(CallPurpose::turn, turn_text(turn), turn.calls);
    std::vector<ToolCall> pending = turn.calls;
    bool faulted = false;
    while (!pending.empty()) {
      std::optional<std::size_t> failed;
      for (std::size_t j = 0; j < pending.size(); ++j) {
        const std::uint64_t idx = call_index++;
        if (options.faults && options.faults->covers(pending[j].name) &&
            next_fault(*options.faults, task.task_id, idx)) {
          failed = j;
          break;
        }
      }
      if (!failed) break;
      faulted = true;
      pending.erase(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(*failed));
      push(CallPurpose::reflect,
           "The " + pending.front().name + " call hit a transient failure; re-issuing it.", pending);
    }
    if (faulted) {
      PlannedTurn resume;
      resume.next_stage = turn.next_stage;
      resume.terminate = turn.terminate;
      resume.premature = turn.premature;
      push(CallPurpose::turn, turn_text(resume), {});
    }
    if (turn.terminate) {
      push(CallPurpose::confirm,
           turn.premature ? "Not finished: the remaining workflow steps have not run yet."
                          : "Summary: every requested step ran and the answer was reported. TERMINATE",
           {});
    }
  }
  return script;
}

}  // namespace geoflow
