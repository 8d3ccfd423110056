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
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "geoflow/sandbox.hpp"

namespace geoflow {

std::string object_id(std::string_view image_id, std::size_t index) {
  return std::string(image_id) + "_o" + std::to_string(index);
}

DayNumber epoch_start() noexcept { return days_from_civil(2020, 4, 1); }

World::World(std::vector<CatalogImage> images, std::vector<SeriesRow> series,
             std::vector<Region> regions)
    : images_(std::move(images)), series_(std::move(series)), regions_(std::move(regions)) {
  build_index();
}

void World::build_index() {
  image_index_.clear();
  series_index_.clear();
  for (std::size_t i = 0; i < images_.size(); ++i) image_index_.emplace(images_[i].image_id, i);
  for (std::size_t i = 0; i < series_.size(); ++i) {
    series_index_[{series_[i].region, series_[i].variable}].push_back(i);
  }
  for (auto& [_, rows] : series_index_) {
    std::stable_sort(rows.begin(), rows.end(),
                     [&](std::size_t a, std::size_t b) { return series_[a].date < series_[b].date; });
  }
}

const Region* World::find_region(std::string_view name) const noexcept {
  for (const auto& r : regions_) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const Region* World::region_at(double lat, double lon) const noexcept {
  for (const auto& r : regions_) {
    if (r.box.contains(lat, lon)) return &r;
  }
  return nullptr;
}

std::optional<std::size_t> World::image_index(std::string_view image_id) const noexcept {
  auto it = image_index_.find(image_id);
  if (it == image_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<const SeriesRow*> World::series_rows(std::string_view region,
                                                 std::string_view variable) const {
  std::vector<const SeriesRow*> out;
  auto it = series_index_.find({std::string(region), std::string(variable)});
  if (it == series_index_.end()) return out;
  for (std::size_t i : it->second) out.push_back(&series_[i]);
  return out;
}

std::optional<double> World::series_value(std::string_view region, std::string_view variable,
                                          DayNumber date) const noexcept {
  auto it = series_index_.find({std::string(region), std::string(variable)});
  if (it == series_index_.end()) return std::nullopt;
  for (std::size_t i : it->second) {
    if (series_[i].date == date) return series_[i].value;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

double round_to(double x, double scale) { return std::round(x * scale) / scale; }

std::vector<Region> make_regions(Rng& rng, std::size_t n) {
  // Regions occupy distinct 10-degree lattice cells so they never overlap.
  constexpr int kLonCells = 36;
  constexpr int kLatCells = 13;  // -60 .. 70
  std::vector<int> cells(kLonCells * kLatCells);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  for (std::size_t i = cells.size() - 1; i > 0; --i) {
    std::swap(cells[i], cells[rng.below(i + 1)]);
  }
  n = std::min(n, cells.size());
  std::vector<Region> regions;
  for (std::size_t i = 0; i < n; ++i) {
    const int cell = cells[i];
    const double cell_west = -180.0 + 10.0 * (cell % kLonCells);
    const double cell_south = -60.0 + 10.0 * (cell / kLonCells);
    Region r;
    r.name = "R" + std::to_string(i + 1);
    r.box.west = round_to(cell_west + rng.uniform(0.0, 3.0), 100);
    r.box.east = round_to(r.box.west + rng.uniform(2.0, 5.0), 100);
    r.box.south = round_to(cell_south + rng.uniform(0.0, 3.0), 100);
    r.box.north = round_to(r.box.south + rng.uniform(2.0, 5.0), 100);
    regions.push_back(r);
  }
  return regions;
}

std::vector<CatalogImage> make_images(Rng& rng, std::size_t n, const std::vector<Region>& regions) {
  std::vector<CatalogImage> images;
  images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CatalogImage img;
    char id[32];
    std::snprintf(id, sizeof(id), "img_%05zu", i + 1);
    img.image_id = id;
    img.product = std::string(kProducts[rng.below(kProducts.size())]);
    if (!regions.empty() && rng.bernoulli(0.75)) {
      const Region& r = regions[rng.below(regions.size())];
      img.lat = round_to(rng.uniform(r.box.south, r.box.north), 1e4);
      img.lon = round_to(rng.uniform(r.box.west, r.box.east), 1e4);
    } else {
      img.lat = round_to(rng.uniform(-60.0, 70.0), 1e4);
      img.lon = round_to(rng.uniform(-180.0, 180.0), 1e4);
    }
    img.date = epoch_start() + static_cast<DayNumber>(rng.below(kEpochDays));
    const int n_objects = rng.range(0, 6);
    for (int k = 0; k < n_objects; ++k) {
      CatalogObject obj;
      obj.category = std::string(kCategories[rng.below(kCategories.size())]);
      const double w = rng.uniform(0.02, 0.12);
      const double h = rng.uniform(0.02, 0.12);
      const double x0 = round_to(rng.uniform(0.0, 1.0 - w), 1e4);
      const double y0 = round_to(rng.uniform(0.0, 1.0 - h), 1e4);
      obj.bbox = {x0, y0, std::min(1.0, round_to(x0 + w, 1e4)), std::min(1.0, round_to(y0 + h, 1e4))};
      img.objects.push_back(obj);
    }
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<SeriesRow> make_series(Rng& rng, const std::vector<Region>& regions) {
  std::vector<SeriesRow> rows;
  rows.reserve(regions.size() * kEpochDays * kVariables.size());
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (const auto& region : regions) {
    // Per-region parameters, drawn in a fixed order.
    const double ndvi_base = rng.uniform(0.1, 0.7);
    const double ndvi_phase = rng.uniform(0.0, kTwoPi);
    const double lst_base = rng.uniform(280.0, 305.0);
    const double builtup_base = rng.uniform(0.05, 0.6);
    const double loss_scale = rng.uniform(0.0, 50.0);
    const double crop_base = rng.uniform(0.2, 0.8);
    const double population_base = std::round(rng.uniform(1000.0, 500000.0));
    const int event_day = rng.range(30, 60);

    for (int d = 0; d < kEpochDays; ++d) {
      const DayNumber date = epoch_start() + d;
      const double t = static_cast<double>(d) / kEpochDays;
      for (std::string_view var : kVariables) {
        double v = 0;
        if (var == "ndvi") {
          v = std::clamp(ndvi_base + 0.15 * std::sin(kTwoPi * t + ndvi_phase) +
                             rng.uniform(-0.05, 0.05),
                         -1.0, 1.0);
          v = round_to(v, 1e4);
        } else if (var == "lst") {
          v = round_to(lst_base + 5.0 * std::sin(kTwoPi * t) + rng.uniform(-2.0, 2.0), 100);
        } else if (var == "builtup") {
          v = round_to(std::clamp(builtup_base + 0.05 * t + rng.uniform(-0.01, 0.01), 0.0, 1.0), 1e4);
        } else if (var == "forest_loss") {
          v = round_to(loss_scale * rng.uniform(), 100);
        } else if (var == "crop_index") {
          v = round_to(std::clamp(crop_base + 0.2 * std::sin(kTwoPi * t) + rng.uniform(-0.03, 0.03),
                                  0.0, 1.0),
                       1e4);
        } else if (var == "damage_count") {
          v = d >= event_day ? static_cast<double>(rng.range(0, 40)) : static_cast<double>(rng.range(0, 2));
        } else {  // population
          v = population_base + static_cast<double>(rng.range(0, 50)) * d;
        }
        rows.push_back({region.name, date, std::string(var), v});
      }
    }
  }
  return rows;
}

}  // namespace

World generate_catalog(std::uint64_t seed, std::size_t n_images, std::size_t n_regions) {
  if (n_images == 0 || n_regions == 0) throw Error("catalog requires n_images >= 1 and n_regions >= 1");
  // Independent streams so that changing one size does not reshuffle the rest.
  std::uint64_t s = seed;
  Rng region_rng(splitmix64(s));
  Rng image_rng(splitmix64(s));
  Rng series_rng(splitmix64(s));
  auto regions = make_regions(region_rng, n_regions);
  auto images = make_images(image_rng, n_images, regions);
  auto series = make_series(series_rng, regions);
  return World(std::move(images), std::move(series), std::move(regions));
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string catalog_jsonl(const World& world) {
  std::string out;
  for (const auto& img : world.images()) {
    Json j = Json::object();
    j["image_id"] = img.image_id;
    j["product"] = img.product;
    j["lat"] = img.lat;
    j["lon"] = img.lon;
    j["timestamp"] = format_date(img.date);
    Json objects = Json::array();
    for (const auto& o : img.objects) {
      Json oj = Json::object();
      oj["category"] = o.category;
      oj["bbox"] = o.bbox;
      objects.push_back(std::move(oj));
    }
    j["objects"] = std::move(objects);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string series_csv(const World& world) {
  std::string out = "region,date,variable,value\n";
  for (const auto& r : world.series()) {
    out += r.region;
    out += ',';
    out += format_date(r.date);
    out += ',';
    out += r.variable;
    out += ',';
    out += format_number(r.value);
    out += '\n';
  }
  return out;
}

std::string regions_json(const World& world) {
  Json j = Json::object();
  for (const auto& r : world.regions()) j[r.name] = r.box.as_array();
  return j.dump(2) + "\n";
}

void write_catalog(const World& world, const std::string& dir) {
  const std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  write_file((p / "catalog.jsonl").string(), catalog_jsonl(world));
  write_file((p / "series.csv").string(), series_csv(world));
  write_file((p / "regions.json").string(), regions_json(world));
}

World load_catalog(const std::string& dir) {
  const std::filesystem::path p(dir);
  std::vector<CatalogImage> images;
  {
    std::istringstream in(read_file((p / "catalog.jsonl").string()));
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const Json j = Json::parse(line);
      CatalogImage img;
      img.image_id = j.at("image_id").get<std::string>();
      img.product = j.at("product").get<std::string>();
      img.lat = j.at("lat").get<double>();
      img.lon = j.at("lon").get<double>();
      img.date = parse_date(j.at("timestamp").get<std::string>());
      for (const auto& oj : j.at("objects")) {
        CatalogObject o;
        o.category = oj.at("category").get<std::string>();
        o.bbox = oj.at("bbox").get<NormBox>();
        img.objects.push_back(std::move(o));
      }
      images.push_back(std::move(img));
    }
  }
  std::vector<SeriesRow> series;
  {
    std::istringstream in(read_file((p / "series.csv").string()));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      std::array<std::string, 4> fields;
      std::size_t start = 0;
      for (std::size_t f = 0; f < 4; ++f) {
        const std::size_t comma = f < 3 ? line.find(',', start) : line.size();
        if (comma == std::string::npos) throw Error("malformed series row: " + line);
        fields[f] = line.substr(start, comma - start);
        start = comma + 1;
      }
      double value = 0;
      auto [ptr, ec] = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(), value);
      if (ec != std::errc{}) throw Error("malformed series value: " + line);
      series.push_back({fields[0], parse_date(fields[1]), fields[2], value});
    }
  }
  std::vector<Region> regions;
  {
    const Json j = Json::parse(read_file((p / "regions.json").string()));
    for (const auto& [name, box] : j.items()) {
      const auto a = box.get<std::array<double, 4>>();
      regions.push_back({name, {a[0], a[1], a[2], a[3]}});
    }
  }
  return World(std::move(images), std::move(series), std::move(regions));
}

}  // namespace geoflow
