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

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geoflow/tools.hpp"

namespace geoflow {

inline constexpr std::array<std::string_view, 3> kProducts{"xview1", "sentinel2", "modis_terra"};
inline constexpr std::array<std::string_view, 4> kCategories{"ship", "building", "vehicle",
                                                             "aircraft"};
inline constexpr std::array<std::string_view, 7> kVariables{
    "ndvi", "lst", "builtup", "forest_loss", "crop_index", "damage_count", "population"};
inline constexpr std::array<std::string_view, 4> kAggregates{"mean", "sum", "min", "max"};

/// Geographic box in degrees: [west, south, east, north].
struct GeoBox {
  double west = 0, south = 0, east = 0, north = 0;

  bool contains(double lat, double lon) const noexcept {
    return lon >= west && lon <= east && lat >= south && lat <= north;
  }
  std::array<double, 4> as_array() const noexcept { return {west, south, east, north}; }
  friend bool operator==(const GeoBox&, const GeoBox&) = default;
};

/// Normalized image-space box [x0, y0, x1, y1] with x0 < x1, y0 < y1.
using NormBox = std::array<double, 4>;

struct CatalogObject {
  std::string category;
  NormBox bbox{};
  friend bool operator==(const CatalogObject&, const CatalogObject&) = default;
};

struct CatalogImage {
  std::string image_id;
  std::string product;
  double lat = 0;
  double lon = 0;
  DayNumber date = 0;
  std::vector<CatalogObject> objects;
  friend bool operator==(const CatalogImage&, const CatalogImage&) = default;
};

std::string object_id(std::string_view image_id, std::size_t index);

struct SeriesRow {
  std::string region;
  DayNumber date = 0;
  std::string variable;
  double value = 0;
  friend bool operator==(const SeriesRow&, const SeriesRow&) = default;
};

struct Region {
  std::string name;
  GeoBox box;
  friend bool operator==(const Region&, const Region&) = default;
};

struct CatalogParams {
  std::uint64_t seed = 7;
  std::size_t n_images = 400;
  std::size_t n_regions = 8;
  friend bool operator==(const CatalogParams&, const CatalogParams&) = default;
};

inline constexpr int kEpochDays = 90;
DayNumber epoch_start() noexcept;  // 2020-04-01

/// The immutable synthetic world shared by all runs.
class World {
 public:
  World() = default;
  World(std::vector<CatalogImage> images, std::vector<SeriesRow> series,
        std::vector<Region> regions);

  const std::vector<CatalogImage>& images() const noexcept { return images_; }
  const std::vector<SeriesRow>& series() const noexcept { return series_; }
  const std::vector<Region>& regions() const noexcept { return regions_; }

  const Region* find_region(std::string_view name) const noexcept;
  /// First region (table order) whose box contains the point.
  const Region* region_at(double lat, double lon) const noexcept;
  std::optional<std::size_t> image_index(std::string_view image_id) const noexcept;
  std::optional<double> series_value(std::string_view region, std::string_view variable,
                                     DayNumber date) const noexcept;
  /// Rows of (region, variable) in date order.
  std::vector<const SeriesRow*> series_rows(std::string_view region,
                                            std::string_view variable) const;

 private:
  void build_index();

  std::vector<CatalogImage> images_;
  std::vector<SeriesRow> series_;
  std::vector<Region> regions_;
  std::map<std::string, std::size_t, std::less<>> image_index_;
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> series_index_;
};

/// Deterministic in `seed` (splitmix64-seeded xoshiro256**).
World generate_catalog(std::uint64_t seed, std::size_t n_images, std::size_t n_regions);
inline World generate_catalog(const CatalogParams& p) {
  return generate_catalog(p.seed, p.n_images, p.n_regions);
}

std::string catalog_jsonl(const World& world);
std::string series_csv(const World& world);
std::string regions_json(const World& world);
/// Writes catalog.jsonl, series.csv and regions.json into `dir`.
void write_catalog(const World& world, const std::string& dir);
World load_catalog(const std::string& dir);

// ---------------------------------------------------------------------------
// Faults
// ---------------------------------------------------------------------------

struct FaultPlan {
  double fault_rate = 0.0;
  std::uint64_t seed = 0;
  std::set<std::string> scope;  // empty = every tool

  bool covers(std::string_view tool) const { return scope.empty() || scope.count(std::string(tool)); }
};

inline constexpr std::string_view kInjectedFaultPayload = "transient backend failure";

/// Pure in (plan.seed, task_id, call_index).
bool next_fault(const FaultPlan& plan, std::string_view task_id, std::uint64_t call_index);

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

/// Registry of every sandbox tool, including final_answer.
const ToolRegistry& sandbox_registry();

enum class HandleKind { image_set, detection_set, series_slice };
std::string_view to_string(HandleKind kind) noexcept;

struct Detection {
  std::string detection_id;
  std::size_t image = 0;  // index into World::images()
  std::string category;
  NormBox bbox{};
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Handle {
  std::string handle_id;
  HandleKind kind = HandleKind::image_set;
  std::vector<std::size_t> images;     // image_set
  std::vector<Detection> detections;   // detection_set
  std::optional<std::string> parent;

  std::size_t size() const noexcept {
    return kind == HandleKind::detection_set ? detections.size() : images.size();
  }
};

struct AnswerRecord {
  std::string text;
  std::optional<double> value;
  friend bool operator==(const AnswerRecord&, const AnswerRecord&) = default;
};

Json to_json(const AnswerRecord& answer);
AnswerRecord answer_from_json(const Json& j);

struct ToolOutcome {
  ToolResult result;
  bool injected_fault = false;
  bool empty_result = false;
  std::uint64_t call_index = 0;
};

struct SessionOptions {
  std::string task_id = "task";
  std::string artifact_dir;  // empty: artifacts are kept in memory only
  std::optional<FaultPlan> faults;
};

/// Per-run tool execution state: handle table, answer slot, artifacts and the
/// fault cursor. Tool failures are returned as error results, never thrown.
class Session {
 public:
  Session(const World& world, SessionOptions options);

  ToolOutcome execute(const ToolCall& call);

  const Handle* handle(std::string_view id) const noexcept;
  const std::optional<AnswerRecord>& answer() const noexcept { return answer_; }
  const std::vector<std::string>& artifacts() const noexcept { return artifacts_; }
  const std::map<std::string, std::string>& artifact_contents() const noexcept {
    return artifact_contents_;
  }
  std::uint64_t calls_attempted() const noexcept { return next_call_; }
  const World& world() const noexcept { return *world_; }

 private:
  Json dispatch(const ToolCall& call, bool& empty);
  const Handle& require_handle(const Json& args, const char* key) const;
  Handle& new_handle(HandleKind kind, const Handle* parent);

  const World* world_;
  SessionOptions options_;
  std::vector<Handle> handles_;
  std::optional<AnswerRecord> answer_;
  std::vector<std::string> artifacts_;
  std::map<std::string, std::string> artifact_contents_;
  std::uint64_t next_call_ = 0;
};

/// GeoJSON FeatureCollection of a detection set. Each feature carries
/// detection_id, image_id, category and the normalized bbox.
std::string render_geojson(const World& world, const std::vector<Detection>& detections);

}  // namespace geoflow
