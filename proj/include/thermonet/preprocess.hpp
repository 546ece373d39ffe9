/*
 * Copyright 2026 The Thermonet Authors
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

// Frame-to-dataset pipeline: dead-pixel filtering, lens undistortion,
// fusing-state frame selection, per-part ROI cropping, orientation
// normalisation to 18 (width) x 35 (length) x 7 (height), aggregates,
// tabular cleaning/standardisation, geometry voxels and build-level splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "thermonet/common.hpp"
#include "thermonet/synthbed.hpp"

namespace thermonet::prep {

using synth::Aggregates;
using synth::Orientation;
using synth::PartPlacement;
using synth::QualityVector;
using synth::ThermalFrame;

inline constexpr std::size_t kVoxelWidth = 18;
inline constexpr std::size_t kVoxelLength = 35;
inline constexpr std::size_t kVoxelHeight = 7;
inline constexpr std::size_t kVoxelSize = kVoxelWidth * kVoxelLength * kVoxelHeight;

/// Identifies a part across a campaign.
struct PartKey {
  int build = 0;
  int part = 0;

  std::string str() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "b%03d_p%03d", build, part);
    return buf;
  }
  auto operator<=>(const PartKey&) const = default;
};

/// Orientation-normalised thermal grid, index (w * 35 + l) * 7 + h.
struct ThermalVoxel {
  PartKey key;
  int printer_id = 0;
  std::vector<double> values = std::vector<double>(kVoxelSize, 0.0);

  double& at(std::size_t w, std::size_t l, std::size_t h) {
    return values[(w * kVoxelLength + l) * kVoxelHeight + h];
  }
  double at(std::size_t w, std::size_t l, std::size_t h) const {
    return values[(w * kVoxelLength + l) * kVoxelHeight + h];
  }
};

/// Binary part-centred design cube, values 0 or 255, index (x * e + y) * e + z.
struct GeometryVoxel {
  PartKey key;
  std::size_t edge = 50;
  std::vector<std::uint8_t> values;
};

/// Raw (x, y, z)-ordered crop, index (i * sy + j) * sz + k.
struct RawGrid {
  std::size_t sx = 0, sy = 0, sz = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(i * sy + j) * sz + k];
  }
};

// ---------------------------------------------------------------------------
// Frame-level operations

/// Replaces readings outside [lo, hi] with the median of the valid readings
/// in the surrounding 3x3 window (or lo/hi clamp when none are valid).
inline ThermalFrame filter_dead_pixels(const ThermalFrame& in, double lo = 0.0, double hi = 400.0) {
  ThermalFrame out = in;
  std::vector<double> window;
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      const double v = in.at(x, y);
      if (v >= lo && v <= hi) continue;
      window.clear();
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long px = static_cast<long>(x) + dx, py = static_cast<long>(y) + dy;
          if (px < 0 || py < 0 || px >= static_cast<long>(in.width) ||
              py >= static_cast<long>(in.height))
            continue;
          const double n = in.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py));
          if (n >= lo && n <= hi) window.push_back(n);
        }
      if (window.empty()) {
        out.at(x, y) = std::clamp(v, lo, hi);
      } else {
        std::sort(window.begin(), window.end());
        const std::size_t m = window.size();
        out.at(x, y) = m % 2 ? window[m / 2] : 0.5 * (window[m / 2 - 1] + window[m / 2]);
      }
    }
  }
  return out;
}

/// Inverse of the radial lens model. The source position of every output
/// pixel is solved once by fixed-point iteration q = p / s(|q|^2).
class Undistorter {
 public:
  Undistorter(std::size_t width, std::size_t height, double k1, double k2,
              std::size_t max_iterations = 20, double tolerance = 1e-6)
      : width_(width), height_(height), map_(width * height) {
    const synth::RadialModel model(width, height, k1, k2);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double pu = (static_cast<double>(x) - model.cx) / model.f;
        const double pv = (static_cast<double>(y) - model.cy) / model.f;
        double qu = pu, qv = pv;
        bool converged = k1 == 0.0 && k2 == 0.0;
        for (std::size_t it = 0; it < max_iterations && !converged; ++it) {
          const double s = model.factor(qu * qu + qv * qv);
          const double nu = pu / s, nv = pv / s;
          const double step = std::hypot(nu - qu, nv - qv);
          qu = nu;
          qv = nv;
          if (!std::isfinite(step)) break;
          converged = step <= tolerance;
        }
        if (!converged) {
          throw Error("undistort: inversion did not converge at normalised radius " +
                      std::to_string(std::hypot(pu, pv)) + " (k1=" + std::to_string(k1) +
                      ", k2=" + std::to_string(k2) + ")");
        }
        map_[y * width + x] = {model.cx + qu * model.f, model.cy + qv * model.f};
      }
    }
  }

  ThermalFrame operator()(const ThermalFrame& in) const {
    if (in.width != width_ || in.height != height_) throw Error("undistort: frame size mismatch");
    ThermalFrame out = in;
    for (std::size_t i = 0; i < map_.size(); ++i) out.temps[i] = in.sample(map_[i].first, map_[i].second);
    return out;
  }

 private:
  std::size_t width_, height_;
  std::vector<std::pair<double, double>> map_;
};

inline ThermalFrame undistort(const ThermalFrame& frame, double k1, double k2) {
  return Undistorter(frame.width, frame.height, k1, k2)(frame);
}

/// Picks the frame at fusing-state `index` (default: the last state) for
/// every layer in [0, layers).
inline std::vector<ThermalFrame> select_fusing_frames(std::span<const ThermalFrame> frames,
                                                      std::size_t layers,
                                                      std::optional<std::size_t> index = {}) {
  std::map<std::size_t, std::vector<const ThermalFrame*>> by_layer;
  for (const auto& f : frames) by_layer[f.layer].push_back(&f);
  std::string missing;
  for (std::size_t l = 0; l < layers; ++l) {
    if (!by_layer.count(l)) missing += (missing.empty() ? "" : ", ") + std::to_string(l);
  }
  if (!missing.empty()) throw Error("select_fusing_frames: no frames for layers " + missing);
  std::vector<ThermalFrame> out;
  out.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& group = by_layer[l];
    std::size_t want = 0;
    if (index) {
      want = *index;
    } else {
      for (const auto* f : group) want = std::max(want, f->frame);
    }
    const ThermalFrame* pick = nullptr;
    for (const auto* f : group)
      if (f->frame == want) pick = f;
    if (!pick) {
      throw Error("select_fusing_frames: layer " + std::to_string(l) + " has no frame index " +
                  std::to_string(want) + " (" + std::to_string(group.size()) + " frames)");
    }
    out.push_back(*pick);
  }
  return out;
}

/// Sub-grid covering the part's footprint and z-extent, (x, y, z) order.
inline RawGrid crop_roi(std::span<const ThermalFrame> layers, const PartPlacement& p) {
  if (layers.empty()) throw Error("crop_roi: no layers");
  const std::size_t w = layers[0].width, h = layers[0].height;
  if (p.x + p.extent_x() > w || p.y + p.extent_y() > h || p.z + p.extent_z() > layers.size()) {
    throw Error("crop_roi: part " + std::to_string(p.id) + " bounds x[" + std::to_string(p.x) +
                ", " + std::to_string(p.x + p.extent_x()) + ") y[" + std::to_string(p.y) + ", " +
                std::to_string(p.y + p.extent_y()) + ") z[" + std::to_string(p.z) + ", " +
                std::to_string(p.z + p.extent_z()) + ") exceed frame " + std::to_string(w) + "x" +
                std::to_string(h) + "x" + std::to_string(layers.size()));
  }
  RawGrid g{p.extent_x(), p.extent_y(), p.extent_z(), {}};
  g.values.reserve(g.sx * g.sy * g.sz);
  for (std::size_t i = 0; i < g.sx; ++i)
    for (std::size_t j = 0; j < g.sy; ++j)
      for (std::size_t k = 0; k < g.sz; ++k) g.values.push_back(layers[p.z + k].at(p.x + i, p.y + j));
  return g;
}

/// Brings a crop into the 18 x 35 x 7 normal form by a pure axis swap.
/// Grids already in normal form are returned unchanged.
inline ThermalVoxel normalize_orientation(const RawGrid& raw, Orientation orientation) {
  ThermalVoxel v;
  if (raw.sx == kVoxelWidth && raw.sy == kVoxelLength && raw.sz == kVoxelHeight) {
    v.values = raw.values;
    return v;
  }
  if (raw.sx == kVoxelLength && raw.sy == kVoxelWidth && raw.sz == kVoxelHeight) {
    if (orientation != Orientation::horizontal) {
      throw Error("normalize_orientation: shape (35, 18, 7) requires horizontal orientation");
    }
    for (std::size_t i = 0; i < kVoxelWidth; ++i)
      for (std::size_t j = 0; j < kVoxelLength; ++j)
        for (std::size_t k = 0; k < kVoxelHeight; ++k) v.at(i, j, k) = raw.at(j, i, k);
    return v;
  }
  throw Error("normalize_orientation: observed shape (" + std::to_string(raw.sx) + ", " +
              std::to_string(raw.sy) + ", " + std::to_string(raw.sz) +
              "), expected (18, 35, 7) or (35, 18, 7)");
}

inline RawGrid as_raw(const ThermalVoxel& v) {
  return RawGrid{kVoxelWidth, kVoxelLength, kVoxelHeight, v.values};
}

inline Aggregates aggregate(const ThermalVoxel& voxel) {
  for (double t : voxel.values) {
    if (!std::isfinite(t)) throw Error("aggregate: non-finite voxel value");
  }
  return synth::aggregate_values(voxel.values);
}

// ---------------------------------------------------------------------------
// Tabular features

/// Retained feature names, in output order. printer_id expands to a one-hot
/// block; orientation and material become {0, 1}.
inline std::vector<std::string> feature_names(std::size_t printers = 5) {
  std::vector<std::string> names;
  for (std::size_t p = 0; p < printers; ++p) names.push_back("printer_" + std::to_string(p));
  for (const char* n :
       {"orientation", "bed_x", "bed_y", "bed_z", "binder_level", "layer_thickness_um",
        "powder_recycle_count", "material", "shadowing_strategy", "powder_d50_um", "powder_flow_s",
        "fuse_lamp_power_pct", "recoat_speed_mm_s", "bed_setpoint_c", "curing_temp_c",
        "curing_time_min", "chamber_o2_ppm", "build_height_mm", "parts_in_build", "layer_time_s",
        "nozzle_health_pct", "spit_rate_hz"}) {
    names.emplace_back(n);
  }
  return names;
}

/// Unstandardised feature vector of a raw record; distractors and
/// identifiers are dropped.
inline std::vector<double> extract_features(const synth::TelemetryRecord& r,
                                            std::size_t printers = 5) {
  auto get = [&](const std::string& key) -> const std::string& {
    const std::string* v = r.find(key);
    if (!v) throw Error("clean_tabular: missing mandatory field '" + key + "'");
    return *v;
  };
  auto num = [&](const std::string& key) {
    const std::string& s = get(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw Error("clean_tabular: field '" + key + "' is not numeric: '" + s + "'");
    }
  };
  std::vector<double> f;
  const int printer = static_cast<int>(num("printer_id"));
  if (printer < 0 || printer >= static_cast<int>(printers)) {
    throw Error("clean_tabular: printer_id " + std::to_string(printer) + " outside [0, " +
                std::to_string(printers) + ")");
  }
  for (std::size_t p = 0; p < printers; ++p) f.push_back(static_cast<int>(p) == printer ? 1.0 : 0.0);
  f.push_back(synth::parse_orientation(get("orientation")) == Orientation::vertical ? 1.0 : 0.0);
  for (const char* k : {"bed_x", "bed_y", "bed_z", "binder_level", "layer_thickness_um",
                        "powder_recycle_count"})
    f.push_back(num(k));
  const std::string& material = get("material");
  if (material != "316L" && material != "17-4PH") {
    throw Error("clean_tabular: unknown material '" + material + "' (expected 316L or 17-4PH)");
  }
  f.push_back(material == "17-4PH" ? 1.0 : 0.0);
  for (const char* k : {"shadowing_strategy", "powder_d50_um", "powder_flow_s",
                        "fuse_lamp_power_pct", "recoat_speed_mm_s", "bed_setpoint_c",
                        "curing_temp_c", "curing_time_min", "chamber_o2_ppm", "build_height_mm",
                        "parts_in_build", "layer_time_s", "nozzle_health_pct", "spit_rate_hz"})
    f.push_back(num(k));
  return f;
}

/// Per-feature mean and population standard deviation from the train split.
struct TabularStats {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> std;

  static TabularStats fit(const std::vector<std::vector<double>>& rows,
                          std::vector<std::string> names) {
    if (rows.empty()) throw Error("standardization: no training rows");
    const std::size_t n = rows[0].size();
    TabularStats s{std::move(names), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    for (const auto& r : rows) {
      if (r.size() != n) throw Error("standardization: ragged feature rows");
      for (std::size_t j = 0; j < n; ++j) s.mean[j] += r[j];
    }
    for (double& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
      for (std::size_t j = 0; j < n; ++j) s.std[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    for (double& v : s.std) {
      v = std::sqrt(v / static_cast<double>(rows.size()));
      if (v < 1e-12) v = 1.0;  // constant column maps to 0
    }
    return s;
  }

  std::vector<double> apply(const std::vector<double>& raw) const {
    if (raw.size() != mean.size()) {
      throw Error("standardization: expected " + std::to_string(mean.size()) + " features, got " +
                  std::to_string(raw.size()));
    }
    std::vector<double> out(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) out[j] = (raw[j] - mean[j]) / std[j];
    return out;
  }

  std::vector<double> invert(const std::vector<double>& z) const {
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] * std[j] + mean[j];
    return out;
  }
};

inline std::vector<double> clean_tabular(const synth::TelemetryRecord& r, const TabularStats& stats) {
  return stats.apply(extract_features(r));
}

// ---------------------------------------------------------------------------
// Geometry

/// Per-layer binary design images (0 / 255), data[y * bed_w + x].
inline std::vector<std::vector<std::uint8_t>> design_slices(const synth::BedLayout& layout) {
  std::vector<std::vector<std::uint8_t>> slices(
      layout.layers, std::vector<std::uint8_t>(layout.bed_w * layout.bed_h, 0));
  for (const auto& p : layout.parts)
    for (std::size_t z = p.z; z < p.z + p.extent_z(); ++z)
      for (std::size_t y = p.y; y < p.y + p.extent_y(); ++y)
        for (std::size_t x = p.x; x < p.x + p.extent_x(); ++x) slices[z][y * layout.bed_w + x] = 255;
  return slices;
}

/// Part-centred cube of edge `roi_edge` cut from the design slices; outside
/// the bed reads as 0. Neighbouring parts inside the cube are kept.
inline GeometryVoxel voxelize_geometry(const std::vector<std::vector<std::uint8_t>>& slices,
                                       std::size_t bed_w, std::size_t bed_h,
                                       const PartPlacement& p, std::size_t roi_edge = 50) {
  if (roi_edge == 0) throw Error("voxelize_geometry: roi_edge must be positive");
  GeometryVoxel g;
  g.edge = roi_edge;
  g.values.assign(roi_edge * roi_edge * roi_edge, 0);
  const long half = static_cast<long>(roi_edge / 2);
  const long x0 = static_cast<long>(p.x + p.extent_x() / 2) - half;
  const long y0 = static_cast<long>(p.y + p.extent_y() / 2) - half;
  const long z0 = static_cast<long>(p.z + p.extent_z() / 2) - half;
  for (std::size_t i = 0; i < roi_edge; ++i) {
    const long x = x0 + static_cast<long>(i);
    if (x < 0 || x >= static_cast<long>(bed_w)) continue;
    for (std::size_t j = 0; j < roi_edge; ++j) {
      const long y = y0 + static_cast<long>(j);
      if (y < 0 || y >= static_cast<long>(bed_h)) continue;
      for (std::size_t k = 0; k < roi_edge; ++k) {
        const long z = z0 + static_cast<long>(k);
        if (z < 0 || z >= static_cast<long>(slices.size())) continue;
        g.values[(i * roi_edge + j) * roi_edge + k] =
            slices[static_cast<std::size_t>(z)][static_cast<std::size_t>(y) * bed_w +
                                                static_cast<std::size_t>(x)] ? 255 : 0;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Records and splits

struct PartRecord {
  PartKey key;
  int printer_id = 0;
  double bed_x = 0.0, bed_y = 0.0, bed_z = 0.0;
  Orientation orientation = Orientation::horizontal;
  std::vector<double> raw_features;  // before standardisation
  std::vector<double> features;      // standardised with train statistics
  Aggregates aggregates;
  QualityVector target;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;  // fraction of builds held out whole
};

struct Splits {
  std::vector<std::size_t> train, val, test;  // indices into the record list
};

/// Whole builds go to test; the remaining parts are shuffled into train/val.
inline Splits split_by_build(std::span<const PartRecord> records, SplitRatios ratios,
                             std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw Error("split_by_build: ratios " + std::to_string(ratios.train) + "/" +
                std::to_string(ratios.val) + "/" + std::to_string(ratios.test) +
                " must be non-negative and sum to 1");
  }
  std::set<int> build_set;
  for (const auto& r : records) build_set.insert(r.key.build);
  if (build_set.size() < 3) {
    throw Error("split_by_build: need at least 3 builds, got " + std::to_string(build_set.size()));
  }
  std::vector<int> builds(build_set.begin(), build_set.end());
  Rng rng(seed, "split");
  std::shuffle(builds.begin(), builds.end(), rng.engine());
  std::size_t n_test = static_cast<std::size_t>(std::llround(ratios.test * builds.size()));
  if (ratios.test > 0 && n_test == 0) n_test = 1;
  n_test = std::min(n_test, builds.size() - 1);
  const std::set<int> test_builds(builds.begin(), builds.begin() + static_cast<long>(n_test));

  Splits s;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (test_builds.count(records[i].key.build) ? s.test : rest).push_back(i);
  }
  std::shuffle(rest.begin(), rest.end(), rng.engine());
  const double tv = ratios.train + ratios.val;
  const std::size_t n_val =
      tv > 0 ? static_cast<std::size_t>(std::llround(ratios.val / tv * rest.size())) : 0;
  s.val.assign(rest.begin(), rest.begin() + static_cast<long>(n_val));
  s.train.assign(rest.begin() + static_cast<long>(n_val), rest.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

// ---------------------------------------------------------------------------
// Whole-build processing

struct PipelineConfig {
  std::optional<std::size_t> fusing_index;  // default: last frame of each layer
  bool filter_dead_pixels = true;
  bool undistort = true;
  std::size_t geometry_roi = 0;  // 0 disables geometry voxels
  std::size_t printers = 5;
};

struct PartSample {
  PartRecord record;
  ThermalVoxel voxel;
  std::optional<GeometryVoxel> geometry;
};

/// Runs the frame pipeline on one build and returns one sample per part
/// (features not yet standardised).
inline std::vector<PartSample> process_build(const synth::BuildData& build,
                                             const PipelineConfig& pc = {}) {
  const auto& layout = build.layout;
  std::vector<ThermalFrame> layers =
      select_fusing_frames(build.frames, layout.layers, pc.fusing_index);
  std::optional<Undistorter> und;
  if (pc.undistort && (build.config.k1 != 0.0 || build.config.k2 != 0.0)) {
    und.emplace(layout.bed_w, layout.bed_h, build.config.k1, build.config.k2);
  }
  for (auto& f : layers) {
    if (pc.filter_dead_pixels) f = filter_dead_pixels(f);
    if (und) f = (*und)(f);
  }
  std::vector<std::vector<std::uint8_t>> slices;
  if (pc.geometry_roi) slices = design_slices(layout);

  std::vector<PartSample> out;
  out.reserve(layout.parts.size());
  for (std::size_t i = 0; i < layout.parts.size(); ++i) {
    const PartPlacement& p = layout.parts[i];
    PartSample s;
    s.record.key = {build.config.build_id, p.id};
    s.record.printer_id = build.config.printer_id;
    s.record.bed_x = p.center_x();
    s.record.bed_y = p.center_y();
    s.record.bed_z = p.center_z();
    s.record.orientation = p.orientation;
    s.record.raw_features = extract_features(build.telemetry.at(i), pc.printers);
    s.voxel = normalize_orientation(crop_roi(layers, p), p.orientation);
    s.voxel.key = s.record.key;
    s.voxel.printer_id = build.config.printer_id;
    s.record.aggregates = aggregate(s.voxel);
    const auto& truth = build.truths.at(i);
    if (truth.part_id != p.id) throw Error("process_build: truth/part order mismatch");
    s.record.target = truth.quality;
    if (pc.geometry_roi) {
      s.geometry = voxelize_geometry(slices, layout.bed_w, layout.bed_h, p, pc.geometry_roi);
      s.geometry->key = s.record.key;
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Assembled dataset: records, voxels (same order), split, train statistics.
struct Dataset {
  std::vector<PartRecord> records;
  std::vector<ThermalVoxel> voxels;
  std::vector<GeometryVoxel> geometry;  // empty unless enabled
  Splits splits;
  TabularStats stats;
  std::uint64_t seed = 0;
};

inline Dataset assemble_dataset(std::vector<PartSample> samples, SplitRatios ratios,
                                std::uint64_t seed, std::size_t printers = 5) {
  Dataset d;
  d.seed = seed;
  for (auto& s : samples) {
    d.records.push_back(std::move(s.record));
    d.voxels.push_back(std::move(s.voxel));
    if (s.geometry) d.geometry.push_back(std::move(*s.geometry));
  }
  if (!d.geometry.empty() && d.geometry.size() != d.records.size()) {
    throw Error("assemble_dataset: geometry voxels missing for some parts");
  }
  d.splits = split_by_build(d.records, ratios, seed);
  std::vector<std::vector<double>> train_rows;
  for (std::size_t i : d.splits.train) train_rows.push_back(d.records[i].raw_features);
  d.stats = TabularStats::fit(train_rows, feature_names(printers));
  for (auto& r : d.records) r.features = d.stats.apply(r.raw_features);
  return d;
}

}  // namespace thermonet::prep
