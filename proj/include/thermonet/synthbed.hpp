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

// Deterministic synthetic print buckets.
//
// A build is a bed layout (TRS-bar proxies at several z levels), a job
// configuration, per-layer thermal frames at F fusing states, one raw
// telemetry record per part, and a planted ground-truth quality vector.
//
// Noise-free fusing-layer temperature at bed pixel (x, y), layer l:
//
//   T = base + printer_offset[p] - edge_cooling * rho^2
//       + density_gain * frac_r(x, y, l) - recycle_penalty * recycle
//       + [pixel inside a part] * (boost * binder
//                                  + thickness_coeff * (thickness - 80)
//                                  + packing_amplitude * h_part)
//
// rho is the distance from the bed centre normalised to 1 at the corners,
// frac_r the fraction of part pixels in the radius-r disc around the pixel,
// and h_part a hidden per-part powder-packing factor (clipped standard
// normal) that appears only through the thermal signature. Captured frames
// add clipped Gaussian noise, clamp to [t_min, t_max] and pass through the
// forward radial lens model.
//
// Ground truth:
//   density = density_base + density_slope * (T_min - density_t_ref) + noise
//   shrink  = shrink_base + shrink_per_degree * (T_mean - shrink_t_ref)
//             + shrink_per_binder * (binder - binder_ref)
//   dim_a   = nominal_a * (1 - axis_gain_a * shrink) * (1 + dim_noise_rel * n)
// where T_min/T_mean aggregate the part's own noise-free canonical voxel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "thermonet/common.hpp"

namespace thermonet::synth {

enum class Orientation { horizontal, vertical };

inline std::string to_string(Orientation o) {
  return o == Orientation::horizontal ? "horizontal" : "vertical";
}

inline Orientation parse_orientation(const std::string& s) {
  if (s == "horizontal") return Orientation::horizontal;
  if (s == "vertical") return Orientation::vertical;
  throw Error("unknown orientation '" + s + "' (expected horizontal or vertical)");
}

/// TRS-bar proxy footprint at horizontal orientation, in bed pixels / layers.
inline constexpr std::size_t kPartLength = 35;
inline constexpr std::size_t kPartWidth = 18;
inline constexpr std::size_t kPartHeight = 7;

struct PartPlacement {
  int id = 0;
  std::size_t x = 0;  // footprint origin, bed pixels
  std::size_t y = 0;
  std::size_t z = 0;  // first layer
  Orientation orientation = Orientation::horizontal;

  std::size_t extent_x() const {
    return orientation == Orientation::horizontal ? kPartLength : kPartWidth;
  }
  std::size_t extent_y() const {
    return orientation == Orientation::horizontal ? kPartWidth : kPartLength;
  }
  std::size_t extent_z() const { return kPartHeight; }

  bool covers(std::size_t px, std::size_t py, std::size_t layer) const {
    return px >= x && px < x + extent_x() && py >= y && py < y + extent_y() && layer >= z &&
           layer < z + extent_z();
  }
  double center_x() const { return static_cast<double>(x) + (extent_x() - 1) / 2.0; }
  double center_y() const { return static_cast<double>(y) + (extent_y() - 1) / 2.0; }
  double center_z() const { return static_cast<double>(z) + (extent_z() - 1) / 2.0; }
};

struct BedLayout {
  std::size_t bed_w = 160;
  std::size_t bed_h = 120;
  std::size_t layers = 64;
  std::vector<PartPlacement> parts;

  /// Rejects parts outside the bed, duplicate ids and footprints that
  /// overlap within a shared layer range.
  void validate() const {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const PartPlacement& p = parts[i];
      if (p.x + p.extent_x() > bed_w || p.y + p.extent_y() > bed_h || p.z + p.extent_z() > layers) {
        throw Error("layout: part " + std::to_string(p.id) + " at (" + std::to_string(p.x) + ", " +
                    std::to_string(p.y) + ", " + std::to_string(p.z) + ") exceeds bed " +
                    std::to_string(bed_w) + "x" + std::to_string(bed_h) + "x" +
                    std::to_string(layers));
      }
      for (std::size_t j = 0; j < i; ++j) {
        const PartPlacement& q = parts[j];
        if (p.id == q.id) throw Error("layout: duplicate part id " + std::to_string(p.id));
        const bool ox = p.x < q.x + q.extent_x() && q.x < p.x + p.extent_x();
        const bool oy = p.y < q.y + q.extent_y() && q.y < p.y + p.extent_y();
        const bool oz = p.z < q.z + q.extent_z() && q.z < p.z + p.extent_z();
        if (ox && oy && oz) {
          throw Error("layout: parts " + std::to_string(q.id) + " and " + std::to_string(p.id) +
                      " overlap");
        }
      }
    }
  }
};

struct FieldParams {
  double base_temp = 130.0;
  std::array<double, 5> printer_offsets{0.0, 5.0, -4.0, 8.0, -7.0};
  double part_boost = 40.0;  // per unit binder level
  double density_gain = 15.0;
  double density_radius = 6.0;
  double recycle_penalty = 1.5;
  double edge_cooling = 8.0;
  double packing_amplitude = 4.0;
  double thickness_coeff = -0.1;  // per um away from 80 um
  double t_min = 80.0;
  double t_max = 220.0;
  double first_frame_fraction = 0.6;  // earliest fusing state relative to canonical
};

struct OracleParams {
  double density_base = 4.2;   // g/cm^3
  double density_slope = 0.02;  // g/cm^3 per degC
  double density_t_ref = 160.0;
  double density_noise = 0.01;  // g/cm^3, 1 sigma
  double shrink_base = 0.01;
  double shrink_per_degree = 0.0008;
  double shrink_t_ref = 165.0;
  double shrink_per_binder = 0.02;
  double binder_ref = 0.6;
  std::array<double, 3> axis_gain{1.0, 0.8, 2.0};  // length, width, height
  double dim_noise_rel = 0.0005;
  std::array<double, 3> nominal_mm{35.0, 18.0, 7.0};
};

struct JobConfig {
  int printer_id = 0;
  int build_id = 0;
  double binder_level = 0.6;
  double layer_thickness_um = 80.0;
  int recycle_count = 0;
  std::string material = "316L";
  double noise_amplitude = 1.0;  // degC, 1 sigma before the 3-sigma clip
  double k1 = 0.02;
  double k2 = 0.005;
  std::uint64_t seed = 0;
  std::size_t frames_per_layer = 2;
  FieldParams field;
  OracleParams oracle;
};

/// Row-major temperature image, data[y * width + x].
struct ThermalFrame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t layer = 0;
  std::size_t frame = 0;
  std::vector<double> temps;

  ThermalFrame() = default;
  ThermalFrame(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), temps(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return temps[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return temps[y * width + x]; }

  /// Bilinear sample with clamp-to-edge.
  double sample(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, width - 1);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    const double bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    return top * (1.0 - fy) + bot * fy;
  }
};

struct Aggregates {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

/// Length, width, height (mm) and envelope density (g/cm^3).
struct QualityVector {
  double length = 0.0;
  double width = 0.0;
  double height = 0.0;
  double density = 0.0;

  std::array<double, 4> as_array() const { return {length, width, height, density}; }
  static QualityVector from_array(const std::array<double, 4>& a) {
    return {a[0], a[1], a[2], a[3]};
  }
  bool operator==(const QualityVector&) const = default;
};

/// Hidden powder-packing factor of a part.
inline double packing_factor(const JobConfig& cfg, int part_id) {
  Rng rng(cfg.seed, "packing", static_cast<std::uint64_t>(cfg.build_id),
          static_cast<std::uint64_t>(part_id));
  return rng.clipped_normal(3.0);
}

/// Radial lens map about the frame centre: a pixel at normalised radius r is
/// read from radius r * (1 + k1 r^2 + k2 r^4). Radii are normalised by half
/// the longer frame side.
struct RadialModel {
  double cx, cy, f, k1, k2;

  RadialModel(std::size_t w, std::size_t h, double k1_, double k2_)
      : cx((static_cast<double>(w) - 1.0) / 2.0),
        cy((static_cast<double>(h) - 1.0) / 2.0),
        f(static_cast<double>(std::max(w, h)) / 2.0),
        k1(k1_),
        k2(k2_) {}

  double factor(double r2) const { return 1.0 + k1 * r2 + k2 * r2 * r2; }

  std::pair<double, double> forward(double x, double y) const {
    const double u = (x - cx) / f;
    const double v = (y - cy) / f;
    const double s = factor(u * u + v * v);
    return {cx + u * s * f, cy + v * s * f};
  }
};

/// Applies the forward radial model with bilinear resampling.
inline ThermalFrame distort(const ThermalFrame& frame, double k1, double k2) {
  const RadialModel model(frame.width, frame.height, k1, k2);
  ThermalFrame out = frame;
  for (std::size_t y = 0; y < frame.height; ++y) {
    for (std::size_t x = 0; x < frame.width; ++x) {
      const auto [sx, sy] = model.forward(static_cast<double>(x), static_cast<double>(y));
      out.at(x, y) = frame.sample(sx, sy);
    }
  }
  return out;
}

namespace detail {

/// Fraction of part pixels inside the radius-r disc around each bed pixel.
/// Pixels outside the bed count as powder.
inline std::vector<double> disc_fraction(const std::vector<unsigned char>& mask, std::size_t w,
                                         std::size_t h, double radius) {
  std::vector<std::pair<int, int>> offsets;
  const int r = static_cast<int>(std::floor(radius));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dx, dy);
  std::vector<double> out(w * h, 0.0);
  const double inv = 1.0 / static_cast<double>(offsets.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t count = 0;
      for (const auto& [dx, dy] : offsets) {
        const long px = static_cast<long>(x) + dx;
        const long py = static_cast<long>(y) + dy;
        if (px >= 0 && py >= 0 && px < static_cast<long>(w) && py < static_cast<long>(h) &&
            mask[static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px)]) {
          ++count;
        }
      }
      out[y * w + x] = static_cast<double>(count) * inv;
    }
  }
  return out;
}

inline double printer_offset(const FieldParams& fp, int printer) {
  if (printer < 0 || printer >= static_cast<int>(fp.printer_offsets.size())) {
    throw Error("printer id " + std::to_string(printer) + " outside [0, " +
                std::to_string(fp.printer_offsets.size()) + ")");
  }
  return fp.printer_offsets[static_cast<std::size_t>(printer)];
}

}  // namespace detail

/// Memoised noise-free field evaluation for one layout/config pair. Layers
/// with the same set of present parts share their density map.
class FieldModel {
 public:
  FieldModel(const BedLayout& layout, const JobConfig& cfg) : layout_(layout), cfg_(cfg) {
    packing_.reserve(layout.parts.size());
    for (const auto& p : layout.parts) packing_.push_back(packing_factor(cfg, p.id));
  }

  /// Canonical (fully fused) noise-free frame of a layer.
  ThermalFrame clean_layer(std::size_t layer) const {
    if (layer >= layout_.layers) {
      throw Error("thermal_field: layer " + std::to_string(layer) + " outside [0, " +
                  std::to_string(layout_.layers) + ")");
    }
    const FieldParams& fp = cfg_.field;
    const std::size_t w = layout_.bed_w, h = layout_.bed_h;
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < layout_.parts.size(); ++i) {
      const auto& p = layout_.parts[i];
      if (layer >= p.z && layer < p.z + p.extent_z()) present.push_back(i);
    }
    const std::vector<double>& frac = density_map(present);
    const double base = fp.base_temp + detail::printer_offset(fp, cfg_.printer_id) -
                        fp.recycle_penalty * cfg_.recycle_count;
    const double in_part = fp.part_boost * cfg_.binder_level +
                           fp.thickness_coeff * (cfg_.layer_thickness_um - 80.0);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double rho_norm = cx * cx + cy * cy;
    ThermalFrame f(w, h);
    f.layer = layer;
    f.frame = cfg_.frames_per_layer - 1;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        double t = base - fp.edge_cooling * (dx * dx + dy * dy) / rho_norm +
                   fp.density_gain * frac[y * w + x];
        f.at(x, y) = t;
      }
    }
    for (std::size_t i : present) {
      const auto& p = layout_.parts[i];
      const double boost = in_part + fp.packing_amplitude * packing_[i];
      for (std::size_t y = p.y; y < p.y + p.extent_y(); ++y)
        for (std::size_t x = p.x; x < p.x + p.extent_x(); ++x) f.at(x, y) += boost;
    }
    return f;
  }

  double packing(std::size_t part_index) const { return packing_.at(part_index); }

 private:
  const std::vector<double>& density_map(const std::vector<std::size_t>& present) const {
    auto it = cache_.find(present);
    if (it != cache_.end()) return it->second;
    const std::size_t w = layout_.bed_w, h = layout_.bed_h;
    std::vector<unsigned char> mask(w * h, 0);
    for (std::size_t i : present) {
      const auto& p = layout_.parts[i];
      for (std::size_t y = p.y; y < p.y + p.extent_y(); ++y)
        for (std::size_t x = p.x; x < p.x + p.extent_x(); ++x) mask[y * w + x] = 1;
    }
    auto [pos, inserted] =
        cache_.emplace(present, detail::disc_fraction(mask, w, h, cfg_.field.density_radius));
    return pos->second;
  }

  BedLayout layout_;
  JobConfig cfg_;
  std::vector<double> packing_;
  mutable std::map<std::vector<std::size_t>, std::vector<double>> cache_;
};

/// Captured frame of one fusing state: clean field scaled towards the powder
/// base for early states, plus clipped noise, clamped to the physical range,
/// then passed through the lens model.
inline ThermalFrame capture_frame(const ThermalFrame& clean, const JobConfig& cfg,
                                  std::size_t frame_index) {
  const FieldParams& fp = cfg.field;
  const std::size_t nframes = cfg.frames_per_layer;
  if (frame_index >= nframes) throw Error("capture_frame: frame index out of range");
  const double progress =
      nframes == 1 ? 1.0
                   : fp.first_frame_fraction + (1.0 - fp.first_frame_fraction) *
                                                   static_cast<double>(frame_index) /
                                                   static_cast<double>(nframes - 1);
  const double floor_t = fp.base_temp + detail::printer_offset(fp, cfg.printer_id);
  Rng rng(cfg.seed, "thermal-noise", static_cast<std::uint64_t>(cfg.build_id),
          clean.layer * nframes + frame_index);
  ThermalFrame f = clean;
  f.frame = frame_index;
  for (double& t : f.temps) {
    t = floor_t + (t - floor_t) * progress;
    if (cfg.noise_amplitude > 0.0) t += cfg.noise_amplitude * rng.clipped_normal(3.0);
    t = std::clamp(t, fp.t_min, fp.t_max);
  }
  if (cfg.k1 != 0.0 || cfg.k2 != 0.0) return distort(f, cfg.k1, cfg.k2);
  return f;
}

/// Captured canonical-state frame of a layer.
inline ThermalFrame thermal_field(const BedLayout& layout, const JobConfig& cfg,
                                  std::size_t layer) {
  const FieldModel model(layout, cfg);
  return capture_frame(model.clean_layer(layer), cfg, cfg.frames_per_layer - 1);
}

/// Noise-free, undistorted canonical voxel of a part in (x, y, z) order,
/// as used by the quality oracle.
inline std::vector<double> clean_part_values(const FieldModel& model, const PartPlacement& p) {
  std::vector<double> values;
  values.reserve(p.extent_x() * p.extent_y() * p.extent_z());
  std::vector<ThermalFrame> layers;
  for (std::size_t k = 0; k < p.extent_z(); ++k) layers.push_back(model.clean_layer(p.z + k));
  for (std::size_t i = 0; i < p.extent_x(); ++i)
    for (std::size_t j = 0; j < p.extent_y(); ++j)
      for (std::size_t k = 0; k < p.extent_z(); ++k) values.push_back(layers[k].at(p.x + i, p.y + j));
  return values;
}

inline Aggregates aggregate_values(const std::vector<double>& values) {
  if (values.empty()) throw Error("aggregate: empty grid");
  Aggregates a{values[0], 0.0, values[0]};
  double sum = 0.0;
  for (double v : values) {
    a.min = std::min(a.min, v);
    a.max = std::max(a.max, v);
    sum += v;
  }
  a.mean = sum / static_cast<double>(values.size());
  return a;
}

/// Planted ground truth for one part (see the header comment).
inline QualityVector quality_oracle(const PartPlacement& part, const Aggregates& agg,
                                    const JobConfig& cfg) {
  const OracleParams& op = cfg.oracle;
  Rng rng(cfg.seed, "oracle", static_cast<std::uint64_t>(cfg.build_id),
          static_cast<std::uint64_t>(part.id));
  const double n_density = rng.clipped_normal(3.0);
  std::array<double, 3> n_dim{};
  for (double& n : n_dim) n = rng.clipped_normal(3.0);
  const double shrink = op.shrink_base + op.shrink_per_degree * (agg.mean - op.shrink_t_ref) +
                        op.shrink_per_binder * (cfg.binder_level - op.binder_ref);
  std::array<double, 3> dims{};
  for (std::size_t a = 0; a < 3; ++a) {
    dims[a] = op.nominal_mm[a] * (1.0 - op.axis_gain[a] * shrink) * (1.0 + op.dim_noise_rel * n_dim[a]);
  }
  QualityVector q;
  q.length = dims[0];
  q.width = dims[1];
  q.height = dims[2];
  q.density = op.density_base + op.density_slope * (agg.min - op.density_t_ref) +
              op.density_noise * n_density;
  return q;
}

// ---------------------------------------------------------------------------
// Telemetry

/// Raw printer-log record: ordered (field, value) pairs as text.
struct TelemetryRecord {
  std::vector<std::pair<std::string, std::string>> fields;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return &v;
    return nullptr;
  }
};

/// Raw telemetry schema in emission order. The last five fields are
/// distractors that carry no signal.
inline const std::vector<std::string>& telemetry_schema() {
  static const std::vector<std::string> schema = {
      "part_id",           "build_id",         "printer_id",           "orientation",
      "bed_x",             "bed_y",            "bed_z",                "binder_level",
      "layer_thickness_um", "powder_recycle_count", "material",         "shadowing_strategy",
      "powder_d50_um",     "powder_flow_s",    "fuse_lamp_power_pct",  "recoat_speed_mm_s",
      "bed_setpoint_c",    "curing_temp_c",    "curing_time_min",      "chamber_o2_ppm",
      "build_height_mm",   "parts_in_build",   "layer_time_s",         "nozzle_health_pct",
      "spit_rate_hz",      "ambient_humidity_pct", "operator_shift",   "job_queue_position",
      "firmware_build",    "sensor_serial"};
  return schema;
}

inline const std::vector<std::string>& distractor_fields() {
  static const std::vector<std::string> d = {"ambient_humidity_pct", "operator_shift",
                                             "job_queue_position", "firmware_build",
                                             "sensor_serial"};
  return d;
}

namespace detail {

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace detail

inline std::vector<TelemetryRecord> emit_telemetry(const BedLayout& layout, const JobConfig& cfg) {
  Rng build_rng(cfg.seed, "telemetry-build", static_cast<std::uint64_t>(cfg.build_id));
  const double d50 = build_rng.uniform(8.0, 12.0);
  const double flow = build_rng.uniform(14.0, 20.0);
  const double lamp = build_rng.uniform(85.0, 100.0);
  const double recoat = build_rng.uniform(150.0, 250.0);
  const double setpoint = 130.0 + build_rng.uniform(-1.0, 1.0);
  const double cure_t = build_rng.uniform(180.0, 200.0);
  const double cure_min = build_rng.uniform(200.0, 260.0);
  const double o2 = build_rng.uniform(50.0, 300.0);
  const double layer_time = build_rng.uniform(9.0, 12.0);
  const double humidity = build_rng.uniform(20.0, 60.0);
  const char* shifts[] = {"A", "B", "C"};
  const std::string shift = shifts[build_rng.index(3)];
  const int queue = static_cast<int>(build_rng.index(40));
  std::size_t top = 0;
  for (const auto& p : layout.parts) top = std::max(top, p.z + p.extent_z());
  const double build_height = static_cast<double>(top) * cfg.layer_thickness_um / 1000.0;

  std::vector<TelemetryRecord> out;
  out.reserve(layout.parts.size());
  for (const auto& p : layout.parts) {
    Rng rng(cfg.seed, "telemetry-part", static_cast<std::uint64_t>(cfg.build_id),
            static_cast<std::uint64_t>(p.id));
    TelemetryRecord r;
    auto put = [&](const std::string& k, std::string v) { r.fields.emplace_back(k, std::move(v)); };
    put("part_id", std::to_string(p.id));
    put("build_id", std::to_string(cfg.build_id));
    put("printer_id", std::to_string(cfg.printer_id));
    put("orientation", to_string(p.orientation));
    put("bed_x", detail::fmt(p.center_x()));
    put("bed_y", detail::fmt(p.center_y()));
    put("bed_z", detail::fmt(p.center_z()));
    put("binder_level", detail::fmt(cfg.binder_level));
    put("layer_thickness_um", detail::fmt(cfg.layer_thickness_um));
    put("powder_recycle_count", std::to_string(cfg.recycle_count));
    put("material", cfg.material);
    put("shadowing_strategy", std::to_string(rng.index(3)));
    put("powder_d50_um", detail::fmt(d50));
    put("powder_flow_s", detail::fmt(flow));
    put("fuse_lamp_power_pct", detail::fmt(lamp));
    put("recoat_speed_mm_s", detail::fmt(recoat));
    put("bed_setpoint_c", detail::fmt(setpoint));
    put("curing_temp_c", detail::fmt(cure_t));
    put("curing_time_min", detail::fmt(cure_min));
    put("chamber_o2_ppm", detail::fmt(o2));
    put("build_height_mm", detail::fmt(build_height));
    put("parts_in_build", std::to_string(layout.parts.size()));
    put("layer_time_s", detail::fmt(layer_time));
    put("nozzle_health_pct", detail::fmt(rng.uniform(90.0, 100.0)));
    put("spit_rate_hz", detail::fmt(rng.uniform(1.0, 5.0)));
    put("ambient_humidity_pct", detail::fmt(humidity + rng.uniform(-2.0, 2.0)));
    put("operator_shift", shift);
    put("job_queue_position", std::to_string(queue));
    put("firmware_build", "4.2." + std::to_string(rng.index(3)));
    put("sensor_serial", "HS-" + std::to_string(1000 + rng.index(9000)));
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole builds

struct PartTruth {
  int part_id = 0;
  Aggregates clean_aggregates;  // oracle inputs
  QualityVector quality;
};

struct BuildData {
  BedLayout layout;
  JobConfig config;
  std::vector<ThermalFrame> frames;  // layer-major, frames_per_layer per layer
  std::vector<TelemetryRecord> telemetry;
  std::vector<PartTruth> truths;

  const ThermalFrame& frame(std::size_t layer, std::size_t index) const {
    return frames.at(layer * config.frames_per_layer + index);
  }
};

inline BuildData generate_build(const BedLayout& layout, const JobConfig& cfg) {
  layout.validate();
  if (cfg.frames_per_layer < 2) throw Error("generate_build: frames_per_layer must be >= 2");
  BuildData b;
  b.layout = layout;
  b.config = cfg;
  const FieldModel model(layout, cfg);
  b.frames.reserve(layout.layers * cfg.frames_per_layer);
  for (std::size_t l = 0; l < layout.layers; ++l) {
    const ThermalFrame clean = model.clean_layer(l);
    for (std::size_t f = 0; f < cfg.frames_per_layer; ++f) b.frames.push_back(capture_frame(clean, cfg, f));
  }
  b.telemetry = emit_telemetry(layout, cfg);
  for (const auto& p : layout.parts) {
    PartTruth t;
    t.part_id = p.id;
    t.clean_aggregates = aggregate_values(clean_part_values(model, p));
    t.quality = quality_oracle(p, t.clean_aggregates, cfg);
    b.truths.push_back(t);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Campaigns: many builds from one master seed

struct CampaignConfig {
  std::size_t builds = 29;
  std::size_t parts_per_build = 30;
  std::size_t printers = 5;
  std::size_t bed_w = 160;
  std::size_t bed_h = 120;
  std::size_t layers = 64;
  std::size_t frames_per_layer = 2;
  double noise_amplitude = 1.0;
  double k1 = 0.02;
  double k2 = 0.005;
  std::uint64_t seed = 7;
  FieldParams field;
  OracleParams oracle;
};

/// Cells of 38x38 pixels on z levels 10 layers apart; each cell holds at
/// most one part, centred, in either orientation.
inline BedLayout random_layout(const CampaignConfig& cc, std::size_t build) {
  constexpr std::size_t cell = 38;
  const std::size_t cols = cc.bed_w / cell;
  const std::size_t rows = cc.bed_h / cell;
  const std::size_t levels = cc.layers >= kPartHeight + 2 ? (cc.layers - 2) / 10 : 0;
  const std::size_t slots = cols * rows * levels;
  if (cc.parts_per_build > slots) {
    throw Error("random_layout: " + std::to_string(cc.parts_per_build) +
                " parts do not fit the bed (" + std::to_string(slots) + " slots)");
  }
  Rng rng(cc.seed, "layout", build);
  std::vector<std::size_t> order(slots);
  for (std::size_t i = 0; i < slots; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng.engine());
  order.resize(cc.parts_per_build);
  std::sort(order.begin(), order.end());
  const std::size_t mx = (cc.bed_w - cols * cell) / 2;
  const std::size_t my = (cc.bed_h - rows * cell) / 2;
  BedLayout layout;
  layout.bed_w = cc.bed_w;
  layout.bed_h = cc.bed_h;
  layout.layers = cc.layers;
  int id = 0;
  for (std::size_t slot : order) {
    const std::size_t level = slot / (cols * rows);
    const std::size_t c = slot % cols;
    const std::size_t r = (slot / cols) % rows;
    PartPlacement p;
    p.id = id++;
    p.orientation = rng.index(2) == 0 ? Orientation::horizontal : Orientation::vertical;
    p.x = mx + c * cell + (cell - p.extent_x()) / 2;
    p.y = my + r * cell + (cell - p.extent_y()) / 2;
    p.z = 2 + level * 10;
    layout.parts.push_back(p);
  }
  return layout;
}

inline JobConfig job_for_build(const CampaignConfig& cc, std::size_t build) {
  Rng rng(cc.seed, "job", build);
  JobConfig cfg;
  cfg.build_id = static_cast<int>(build);
  cfg.printer_id = static_cast<int>(build % cc.printers);
  cfg.binder_level = rng.uniform(0.45, 0.75);
  cfg.layer_thickness_um = 60.0 + 5.0 * static_cast<double>(rng.index(9));
  cfg.recycle_count = static_cast<int>(rng.index(6));
  cfg.material = rng.index(2) == 0 ? "316L" : "17-4PH";
  cfg.noise_amplitude = cc.noise_amplitude;
  cfg.k1 = cc.k1;
  cfg.k2 = cc.k2;
  cfg.seed = cc.seed;
  cfg.frames_per_layer = cc.frames_per_layer;
  cfg.field = cc.field;
  cfg.oracle = cc.oracle;
  return cfg;
}

// ---------------------------------------------------------------------------
// Layout description files: "key = value" lines, one "part = id x y z
// orientation" line per part, '#' comments.

inline std::string format_layout(const BedLayout& layout) {
  std::ostringstream os;
  os << "bed_w = " << layout.bed_w << "\n";
  os << "bed_h = " << layout.bed_h << "\n";
  os << "layers = " << layout.layers << "\n";
  for (const auto& p : layout.parts) {
    os << "part = " << p.id << ' ' << p.x << ' ' << p.y << ' ' << p.z << ' '
       << to_string(p.orientation) << "\n";
  }
  return os.str();
}

inline BedLayout parse_layout(const std::string& text) {
  BedLayout layout;
  layout.parts.clear();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw Error("layout line " + std::to_string(lineno) + ": missing '='");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "bed_w") {
        layout.bed_w = std::stoul(value);
      } else if (key == "bed_h") {
        layout.bed_h = std::stoul(value);
      } else if (key == "layers") {
        layout.layers = std::stoul(value);
      } else if (key == "part") {
        std::istringstream ps(value);
        PartPlacement p;
        std::string orient;
        if (!(ps >> p.id >> p.x >> p.y >> p.z >> orient)) throw Error("expected 'id x y z orientation'");
        p.orientation = parse_orientation(orient);
        layout.parts.push_back(p);
      } else {
        throw Error("unknown key '" + key + "' (accepted: bed_w, bed_h, layers, part)");
      }
    } catch (const std::logic_error&) {
      throw Error("layout line " + std::to_string(lineno) + ": bad value '" + value + "'");
    } catch (const Error& e) {
      throw Error("layout line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  layout.validate();
  return layout;
}

}  // namespace thermonet::synth
