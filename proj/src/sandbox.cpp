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
#include <cmath>
#include <filesystem>
#include <functional>

#include "geoflow/sandbox.hpp"
#include "geoflow/workflow.hpp"

namespace geoflow {

namespace {

class ToolFailure : public Error {
 public:
  ToolFailure(std::string kind, const std::string& message)
      : Error(kind + ": " + message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

ParamSpec param(std::string name, ParamKind kind, bool required, std::string description) {
  ParamSpec p;
  p.name = std::move(name);
  p.kind = kind;
  p.required = required;
  p.description = std::move(description);
  return p;
}

ParamSpec enum_param(std::string name, std::vector<std::string> values, bool required,
                     std::string description) {
  ParamSpec p = param(std::move(name), ParamKind::enumeration, required, std::move(description));
  p.enum_values = std::move(values);
  return p;
}

template <std::size_t N>
std::vector<std::string> names(const std::array<std::string_view, N>& arr) {
  return {arr.begin(), arr.end()};
}

ToolRegistry build_registry() {
  ToolRegistry r;
  r.add({"list_products", "List the satellite products available in the catalog.", {}});
  r.add({"load_product",
         "Load every catalog image of a satellite product into a new image-set handle.",
         {enum_param("product", names(kProducts), true, "Product name.")}});
  {
    ParamSpec bbox = param("bbox", ParamKind::array, false,
                           "Bounding box [west, south, east, north] in degrees.");
    bbox.element_kind = ParamKind::number;
    r.add({"filter_spatial",
           "Keep items whose image center lies inside a bounding box or a named region.",
           {param("handle", ParamKind::string, true, "Input handle id."), bbox,
            param("region", ParamKind::string, false, "Named region (alternative to bbox).")}});
  }
  r.add({"filter_temporal", "Keep items acquired between two dates (inclusive).",
         {param("handle", ParamKind::string, true, "Input handle id."),
          param("start_date", ParamKind::string, true, "First date, YYYY-MM-DD."),
          param("end_date", ParamKind::string, true, "Last date, YYYY-MM-DD.")}});
  r.add({"run_detection", "Run the object detector over an image set, producing a detection set.",
         {param("handle", ParamKind::string, true, "Image-set handle id."),
          param("drop_rate", ParamKind::number, false, "Probability of missing an object (default 0)."),
          param("jitter", ParamKind::number, false, "Box coordinate noise amplitude (default 0).")}});
  r.add({"filter_category", "Keep detections of one object category.",
         {param("handle", ParamKind::string, true, "Detection-set handle id."),
          enum_param("category", names(kCategories), true, "Object category.")}});
  r.add({"count_items", "Count the images or detections held by a handle.",
         {param("handle", ParamKind::string, true, "Handle id.")}});
  r.add({"render_map", "Render a detection set onto a map (GeoJSON artifact).",
         {param("handle", ParamKind::string, true, "Detection-set handle id."),
          param("out_path", ParamKind::string, false, "Artifact file name.")}});
  r.add({"query_series",
         "Aggregate a regional product time series over a date range.",
         {param("region", ParamKind::string, true, "Region name, e.g. R1."),
          enum_param("variable", names(kVariables), true, "Product variable."),
          param("start_date", ParamKind::string, true, "First date, YYYY-MM-DD."),
          param("end_date", ParamKind::string, true, "Last date, YYYY-MM-DD."),
          enum_param("aggregate", names(kAggregates), true, "Aggregate function.")}});
  r.add({"correlate",
         "Sum a regional variable (e.g. population) over the detected damaged buildings.",
         {param("damage_handle", ParamKind::string, true, "Detection-set handle of damaged buildings."),
          enum_param("population_variable", names(kVariables), true, "Regional variable to sum.")}});
  r.add({std::string(kFinalAnswerTool), "Report the final answer to the user.",
         {param("answer", ParamKind::string, true, "Answer text."),
          param("value", ParamKind::number, false, "Numeric answer, when the task asks for a number.")}});
  return r;
}

double number_arg(const Json& args, const char* key, double fallback) {
  if (!args.contains(key)) return fallback;
  return args.at(key).get<double>();
}

std::string string_arg(const Json& args, const char* key) {
  return args.at(key).get<std::string>();
}

DayNumber date_arg(const Json& args, const char* key) {
  const std::string text = string_arg(args, key);
  if (!is_iso_date(text)) {
    throw ToolFailure("ArgumentError", std::string(key) + " '" + text + "' is not YYYY-MM-DD");
  }
  return parse_date(text);
}

Json handle_summary(const Handle& h, bool empty) {
  Json j = Json::object();
  j["handle"] = h.handle_id;
  j["kind"] = to_string(h.kind);
  j["count"] = h.size();
  if (empty) j["warning"] = "EmptyResult";
  return j;
}

}  // namespace

const ToolRegistry& sandbox_registry() {
  static const ToolRegistry registry = build_registry();
  return registry;
}

std::string_view to_string(HandleKind kind) noexcept {
  switch (kind) {
    case HandleKind::image_set: return "image_set";
    case HandleKind::detection_set: return "detection_set";
    case HandleKind::series_slice: return "series_slice";
  }
  return "image_set";
}

Json to_json(const AnswerRecord& answer) {
  Json j = Json::object();
  j["text"] = answer.text;
  if (answer.value) j["value"] = *answer.value;
  return j;
}

AnswerRecord answer_from_json(const Json& j) {
  AnswerRecord a;
  a.text = j.value("text", std::string{});
  if (j.contains("value") && j.at("value").is_number()) a.value = j.at("value").get<double>();
  return a;
}

bool next_fault(const FaultPlan& plan, std::string_view task_id, std::uint64_t call_index) {
  if (plan.fault_rate <= 0.0) return false;
  if (plan.fault_rate >= 1.0) return true;
  std::uint64_t key = mix64(plan.seed ^ fnv1a64(task_id));
  key = mix64(key + call_index);
  return keyed_uniform(key) < plan.fault_rate;
}

std::string render_geojson(const World& world, const std::vector<Detection>& detections) {
  constexpr double kHalfFootprint = 0.05;  // degrees
  Json features = Json::array();
  for (const auto& d : detections) {
    const CatalogImage& img = world.images().at(d.image);
    const double west = img.lon - kHalfFootprint;
    const double north = img.lat + kHalfFootprint;
    const double span = 2 * kHalfFootprint;
    const double x0 = west + d.bbox[0] * span;
    const double x1 = west + d.bbox[2] * span;
    const double y0 = north - d.bbox[1] * span;
    const double y1 = north - d.bbox[3] * span;
    Json ring = Json::array({Json::array({x0, y0}), Json::array({x1, y0}), Json::array({x1, y1}),
                             Json::array({x0, y1}), Json::array({x0, y0})});
    Json geometry = Json::object();
    geometry["type"] = "Polygon";
    geometry["coordinates"] = Json::array({ring});
    Json props = Json::object();
    props["detection_id"] = d.detection_id;
    props["image_id"] = img.image_id;
    props["category"] = d.category;
    props["bbox"] = d.bbox;
    props["date"] = format_date(img.date);
    Json f = Json::object();
    f["type"] = "Feature";
    f["geometry"] = std::move(geometry);
    f["properties"] = std::move(props);
    features.push_back(std::move(f));
  }
  Json fc = Json::object();
  fc["type"] = "FeatureCollection";
  fc["features"] = std::move(features);
  return fc.dump() + "\n";
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

Session::Session(const World& world, SessionOptions options)
    : world_(&world), options_(std::move(options)) {}

const Handle* Session::handle(std::string_view id) const noexcept {
  for (const auto& h : handles_) {
    if (h.handle_id == id) return &h;
  }
  return nullptr;
}

const Handle& Session::require_handle(const Json& args, const char* key) const {
  const std::string id = string_arg(args, key);
  const Handle* h = handle(id);
  if (!h) throw ToolFailure("UnknownHandle", "no handle '" + id + "' in this run");
  return *h;
}

Handle& Session::new_handle(HandleKind kind, const Handle* parent) {
  Handle h;
  h.handle_id = "h" + std::to_string(handles_.size() + 1);
  h.kind = kind;
  if (parent) h.parent = parent->handle_id;
  handles_.push_back(std::move(h));
  return handles_.back();
}

ToolOutcome Session::execute(const ToolCall& call) {
  ToolOutcome out;
  out.call_index = next_call_++;
  out.result.call_id = call.call_id;

  const ToolDefinition* def = sandbox_registry().find(call.name);
  if (options_.faults && options_.faults->covers(call.name) &&
      next_fault(*options_.faults, options_.task_id, out.call_index)) {
    out.injected_fault = true;
    out.result.status = ToolStatus::error;
    out.result.payload = std::string(kInjectedFaultPayload);
    return out;
  }
  if (!def) {
    out.result.status = ToolStatus::error;
    out.result.payload = "UnknownTool: no tool named '" + call.name + "'";
    return out;
  }
  if (auto problem = check_arguments(*def, call.arguments)) {
    out.result.status = ToolStatus::error;
    out.result.payload = "ArgumentError: " + *problem;
    return out;
  }
  try {
    bool empty = false;
    Json payload = dispatch(call, empty);
    out.empty_result = empty;
    out.result.payload = payload.dump();
  } catch (const ToolFailure& e) {
    out.result.status = ToolStatus::error;
    out.result.payload = e.what();
  } catch (const std::exception& e) {
    out.result.status = ToolStatus::error;
    out.result.payload = std::string("ToolError: ") + e.what();
  }
  return out;
}

Json Session::dispatch(const ToolCall& call, bool& empty) {
  const Json& args = call.arguments;
  const std::string& name = call.name;
  const auto& images = world_->images();

  if (name == "list_products") {
    Json products = Json::array();
    for (auto p : kProducts) {
      const auto n = std::count_if(images.begin(), images.end(),
                                   [&](const CatalogImage& img) { return img.product == p; });
      Json entry = Json::object();
      entry["product"] = p;
      entry["images"] = n;
      products.push_back(std::move(entry));
    }
    Json j = Json::object();
    j["products"] = std::move(products);
    return j;
  }

  if (name == "load_product") {
    const std::string product = string_arg(args, "product");
    if (std::find(kProducts.begin(), kProducts.end(), product) == kProducts.end()) {
      throw ToolFailure("UnknownProduct", "no product '" + product + "'");
    }
    Handle& h = new_handle(HandleKind::image_set, nullptr);
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].product == product) h.images.push_back(i);
    }
    empty = h.images.empty();
    return handle_summary(h, empty);
  }

  if (name == "filter_spatial" || name == "filter_temporal") {
    const Handle& in = require_handle(args, "handle");
    if (in.kind == HandleKind::series_slice) {
      throw ToolFailure("KindMismatch", name + " expects an image_set or detection_set handle");
    }
    std::function<bool(const CatalogImage&)> keep;
    if (name == "filter_spatial") {
      const bool has_bbox = args.contains("bbox");
      const bool has_region = args.contains("region");
      if (has_bbox == has_region) {
        throw ToolFailure("ArgumentError", "filter_spatial needs exactly one of bbox or region");
      }
      GeoBox box;
      if (has_region) {
        const Region* r = world_->find_region(string_arg(args, "region"));
        if (!r) throw ToolFailure("UnknownRegion", "no region '" + string_arg(args, "region") + "'");
        box = r->box;
      } else {
        const auto& b = args.at("bbox");
        if (b.size() != 4) throw ToolFailure("ArgumentError", "bbox must have 4 numbers");
        box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        if (!(box.west < box.east && box.south < box.north)) {
          throw ToolFailure("ArgumentError", "bbox must be ordered [west, south, east, north]");
        }
      }
      keep = [box](const CatalogImage& img) { return box.contains(img.lat, img.lon); };
    } else {
      const DayNumber start = date_arg(args, "start_date");
      const DayNumber end = date_arg(args, "end_date");
      if (end < start) throw ToolFailure("ArgumentError", "end_date precedes start_date");
      keep = [start, end](const CatalogImage& img) { return img.date >= start && img.date <= end; };
    }
    // Copy the input before new_handle() may reallocate the table.
    const Handle input = in;
    Handle& h = new_handle(input.kind, &input);
    if (input.kind == HandleKind::image_set) {
      for (std::size_t i : input.images) {
        if (keep(images[i])) h.images.push_back(i);
      }
    } else {
      for (const auto& d : input.detections) {
        if (keep(images[d.image])) h.detections.push_back(d);
      }
    }
    empty = h.size() == 0;
    return handle_summary(h, empty);
  }

  if (name == "run_detection") {
    const Handle input = require_handle(args, "handle");
    if (input.kind != HandleKind::image_set) {
      throw ToolFailure("KindMismatch", "run_detection expects an image_set handle");
    }
    const double drop_rate = number_arg(args, "drop_rate", 0.0);
    const double jitter = number_arg(args, "jitter", 0.0);
    if (drop_rate < 0 || drop_rate > 1) throw ToolFailure("ArgumentError", "drop_rate must be in [0,1]");
    if (jitter < 0 || jitter > 0.5) throw ToolFailure("ArgumentError", "jitter must be in [0,0.5]");
    Handle& h = new_handle(HandleKind::detection_set, &input);
    for (std::size_t i : input.images) {
      const CatalogImage& img = images[i];
      for (std::size_t k = 0; k < img.objects.size(); ++k) {
        const std::string id = object_id(img.image_id, k);
        const std::uint64_t base = fnv1a64(id);
        if (drop_rate > 0 && keyed_uniform(base ^ 0xD509D509ULL) < drop_rate) continue;
        NormBox box = img.objects[k].bbox;
        if (jitter > 0) {
          NormBox moved = box;
          for (std::size_t c = 0; c < 4; ++c) {
            const double u = keyed_uniform(base + 0x1000 * (c + 1));
            moved[c] = std::clamp(box[c] + (2 * u - 1) * jitter, 0.0, 1.0);
          }
          if (moved[0] < moved[2] && moved[1] < moved[3]) box = moved;
        }
        h.detections.push_back({id, i, img.objects[k].category, box});
      }
    }
    empty = h.detections.empty();
    return handle_summary(h, empty);
  }

  if (name == "filter_category") {
    const Handle input = require_handle(args, "handle");
    if (input.kind != HandleKind::detection_set) {
      throw ToolFailure("KindMismatch", "filter_category expects a detection_set handle");
    }
    const std::string category = casefold(trim(string_arg(args, "category")));
    Handle& h = new_handle(HandleKind::detection_set, &input);
    for (const auto& d : input.detections) {
      if (d.category == category) h.detections.push_back(d);
    }
    empty = h.detections.empty();
    return handle_summary(h, empty);
  }

  if (name == "count_items") {
    const Handle& h = require_handle(args, "handle");
    Json j = Json::object();
    j["handle"] = h.handle_id;
    j["count"] = h.size();
    return j;
  }

  if (name == "render_map") {
    const Handle& h = require_handle(args, "handle");
    if (h.kind != HandleKind::detection_set) {
      throw ToolFailure("KindMismatch", "render_map expects a detection_set handle");
    }
    std::string file = options_.task_id + "_map.geojson";
    if (args.contains("out_path")) {
      file = string_arg(args, "out_path");
      if (file.empty() || file.find('/') != std::string::npos ||
          file.find('\\') != std::string::npos || file.find("..") != std::string::npos) {
        throw ToolFailure("ArgumentError", "out_path must be a plain file name");
      }
    }
    const std::string content = render_geojson(*world_, h.detections);
    if (!options_.artifact_dir.empty()) {
      write_file((std::filesystem::path(options_.artifact_dir) / file).string(), content);
    }
    artifact_contents_[file] = content;
    if (std::find(artifacts_.begin(), artifacts_.end(), file) == artifacts_.end()) {
      artifacts_.push_back(file);
    }
    empty = h.detections.empty();
    Json j = Json::object();
    j["path"] = file;
    j["features"] = h.detections.size();
    if (empty) j["warning"] = "EmptyResult";
    return j;
  }

  if (name == "query_series") {
    const std::string region = string_arg(args, "region");
    if (!world_->find_region(region)) throw ToolFailure("UnknownRegion", "no region '" + region + "'");
    const std::string variable = string_arg(args, "variable");
    const DayNumber start = date_arg(args, "start_date");
    const DayNumber end = date_arg(args, "end_date");
    if (end < start) throw ToolFailure("ArgumentError", "end_date precedes start_date");
    const std::string aggregate = string_arg(args, "aggregate");
    std::vector<double> values;
    for (const SeriesRow* row : world_->series_rows(region, variable)) {
      if (row->date >= start && row->date <= end) values.push_back(row->value);
    }
    Json j = Json::object();
    j["region"] = region;
    j["variable"] = variable;
    j["aggregate"] = aggregate;
    j["rows"] = values.size();
    if (values.empty()) {
      empty = true;
      j["value"] = nullptr;
      j["warning"] = "EmptyResult";
      return j;
    }
    double v = 0;
    if (aggregate == "sum" || aggregate == "mean") {
      for (double x : values) v += x;
      if (aggregate == "mean") v /= static_cast<double>(values.size());
    } else if (aggregate == "min") {
      v = *std::min_element(values.begin(), values.end());
    } else {
      v = *std::max_element(values.begin(), values.end());
    }
    j["value"] = v;
    return j;
  }

  if (name == "correlate") {
    const Handle& h = require_handle(args, "damage_handle");
    if (h.kind != HandleKind::detection_set) {
      throw ToolFailure("KindMismatch", "correlate expects a detection_set handle");
    }
    const std::string variable = string_arg(args, "population_variable");
    double total = 0;
    std::size_t matched = 0;
    for (const auto& d : h.detections) {
      const CatalogImage& img = images[d.image];
      const Region* r = world_->region_at(img.lat, img.lon);
      if (!r) continue;
      if (auto v = world_->series_value(r->name, variable, img.date)) {
        total += *v;
        ++matched;
      }
    }
    empty = matched == 0;
    Json j = Json::object();
    j["value"] = total;
    j["matched"] = matched;
    if (empty) j["warning"] = "EmptyResult";
    return j;
  }

  if (name == kFinalAnswerTool) {
    AnswerRecord a;
    a.text = string_arg(args, "answer");
    if (args.contains("value")) a.value = args.at("value").get<double>();
    answer_ = a;
    Json j = Json::object();
    j["accepted"] = true;
    return j;
  }

  throw ToolFailure("UnknownTool", "no tool named '" + name + "'");
}

}  // namespace geoflow
