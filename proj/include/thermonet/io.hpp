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

// Persistence: atomic file writes, SHA-256 content hashes, THVX voxel
// blobs, key-value config files, model checkpoints, and the on-disk layout
// of synthetic builds and preprocessed datasets.
//
// THVX blob: "THVX", then little-endian u32 version (1), u32 dtype
// (1 = f32, 2 = u8), u32 W, u32 L, u32 H, then the row-major payload with
// index (w * L + l) * H + h.
//
// Checkpoint: one line of JSON (architecture, target statistics, tensor
// table, payload hash) followed by the raw little-endian float64 payload.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "thermonet/common.hpp"
#include "thermonet/models.hpp"
#include "thermonet/preprocess.hpp"
#include "thermonet/synthbed.hpp"

namespace thermonet::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "blob codecs assume a little-endian host");

// ---------------------------------------------------------------------------
// Files and hashes

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("short write to '" + path.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Shortest text that parses back to the same double.
inline std::string exact(double v) {
  char buf[32];
  for (int p = 15; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// THVX blobs

enum class DType : std::uint32_t { f32 = 1, u8 = 2 };

struct VoxelBlob {
  DType dtype = DType::f32;
  std::uint32_t w = 0, l = 0, h = 0;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t count() const { return std::size_t{w} * l * h; }
};

inline constexpr std::uint32_t kBlobVersion = 1;

inline std::string encode_blob(const VoxelBlob& b) {
  const std::size_t n = b.count();
  const std::size_t have = b.dtype == DType::f32 ? b.f32.size() : b.u8.size();
  if (have != n) {
    throw Error("thvx: payload has " + std::to_string(have) + " values, dimensions need " +
                std::to_string(n));
  }
  std::string out("THVX");
  auto put = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  put(kBlobVersion);
  put(static_cast<std::uint32_t>(b.dtype));
  put(b.w);
  put(b.l);
  put(b.h);
  if (b.dtype == DType::f32) {
    out.append(reinterpret_cast<const char*>(b.f32.data()), n * sizeof(float));
  } else {
    out.append(reinterpret_cast<const char*>(b.u8.data()), n);
  }
  return out;
}

inline VoxelBlob decode_blob(std::string_view bytes, const std::string& what = "blob") {
  if (bytes.size() < 24 || bytes.substr(0, 4) != "THVX") throw Error(what + ": not a THVX blob");
  auto get = [&](std::size_t at) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + at, 4);
    return v;
  };
  if (get(4) != kBlobVersion) throw Error(what + ": unsupported THVX version " + std::to_string(get(4)));
  VoxelBlob b;
  const std::uint32_t dt = get(8);
  if (dt != 1 && dt != 2) throw Error(what + ": unknown dtype code " + std::to_string(dt));
  b.dtype = static_cast<DType>(dt);
  b.w = get(12);
  b.l = get(16);
  b.h = get(20);
  const std::size_t size = b.dtype == DType::f32 ? 4 : 1;
  if (bytes.size() - 24 != b.count() * size) {
    throw Error(what + ": payload is " + std::to_string(bytes.size() - 24) + " bytes, expected " +
                std::to_string(b.count() * size));
  }
  if (b.dtype == DType::f32) {
    b.f32.resize(b.count());
    std::memcpy(b.f32.data(), bytes.data() + 24, b.count() * 4);
  } else {
    b.u8.assign(bytes.begin() + 24, bytes.end());
  }
  return b;
}

inline VoxelBlob thermal_blob(const prep::ThermalVoxel& v) {
  VoxelBlob b;
  b.w = prep::kVoxelWidth;
  b.l = prep::kVoxelLength;
  b.h = prep::kVoxelHeight;
  b.f32.assign(v.values.begin(), v.values.end());
  return b;
}

inline std::vector<double> thermal_values(const VoxelBlob& b, const std::string& what) {
  if (b.dtype != DType::f32 || b.w != prep::kVoxelWidth || b.l != prep::kVoxelLength ||
      b.h != prep::kVoxelHeight) {
    throw Error(what + ": expected an f32 18x35x7 thermal voxel");
  }
  return {b.f32.begin(), b.f32.end()};
}

inline VoxelBlob geometry_blob(const prep::GeometryVoxel& v) {
  VoxelBlob b;
  b.dtype = DType::u8;
  b.w = b.l = b.h = static_cast<std::uint32_t>(v.edge);
  b.u8 = v.values;
  return b;
}

/// Frames of one build: W = frame width, L = frame height, H = frame count.
inline VoxelBlob frames_blob(const std::vector<synth::ThermalFrame>& frames) {
  if (frames.empty()) throw Error("thvx: no frames to encode");
  VoxelBlob b;
  b.w = static_cast<std::uint32_t>(frames[0].width);
  b.l = static_cast<std::uint32_t>(frames[0].height);
  b.h = static_cast<std::uint32_t>(frames.size());
  b.f32.resize(b.count());
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t y = 0; y < b.l; ++y)
      for (std::size_t x = 0; x < b.w; ++x)
        b.f32[(x * b.l + y) * b.h + f] = static_cast<float>(frames[f].at(x, y));
  return b;
}

inline std::vector<synth::ThermalFrame> frames_from_blob(const VoxelBlob& b, std::size_t per_layer) {
  if (b.dtype != DType::f32) throw Error("frames: expected f32 payload");
  if (per_layer == 0 || b.h % per_layer) throw Error("frames: count not a multiple of frames per layer");
  std::vector<synth::ThermalFrame> out;
  out.reserve(b.h);
  for (std::size_t f = 0; f < b.h; ++f) {
    synth::ThermalFrame fr(b.w, b.l);
    fr.layer = f / per_layer;
    fr.frame = f % per_layer;
    for (std::size_t y = 0; y < b.l; ++y)
      for (std::size_t x = 0; x < b.w; ++x) fr.at(x, y) = b.f32[(x * b.l + y) * b.h + f];
    out.push_back(std::move(fr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Key-value config files: "key = value" lines, '#' starts a comment.

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "config") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto eq = line.find('=');
      const std::string where = source + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw Error(where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw Error(where + ": empty key");
      if (kv.values_.count(key)) throw Error(where + ": key '" + key + "' given twice");
      kv.values_[key] = value;
    }
    return kv;
  }

  static KeyValues load(const fs::path& path) { return parse(read_file(path), path.string()); }

  /// Rejects any key outside the accepted list, naming the accepted keys.
  void require_known(const std::vector<std::string>& accepted) const {
    for (const auto& [k, v] : values_) {
      if (std::find(accepted.begin(), accepted.end(), k) == accepted.end()) {
        std::string list;
        for (const auto& a : accepted) list += (list.empty() ? "" : ", ") + a;
        throw Error("invalid config key '" + k + "' (accepted: " + list + ")");
      }
    }
  }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }
  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline json tensor_table(const ad::ParamSet<models::Real>& ps, const std::string& prefix,
                         std::string& payload) {
  json table = json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps.at(i);
    table.push_back({{"name", prefix + p.name},
                     {"shape", p.value.shape()},
                     {"offset", payload.size() / sizeof(double)}});
    const auto& s = p.value.storage();
    payload.append(reinterpret_cast<const char*>(s.data()), s.size() * sizeof(double));
  }
  return table;
}

inline void restore(ad::ParamSet<models::Real>& ps, const std::string& prefix, const json& table,
                    std::string_view payload, const std::string& what) {
  std::map<std::string, const json*> by_name;
  for (const auto& e : table) by_name[e.at("name").get<std::string>()] = &e;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps.at(i);
    auto it = by_name.find(prefix + p.name);
    if (it == by_name.end()) throw Error(what + ": tensor '" + prefix + p.name + "' missing");
    const json& e = *it->second;
    if (e.at("shape").get<ad::Shape>() != p.value.shape()) {
      throw Error(what + ": tensor '" + prefix + p.name + "' has shape " +
                  e.at("shape").dump() + ", model expects " + ad::to_string(p.value.shape()));
    }
    const std::size_t off = e.at("offset").get<std::size_t>() * sizeof(double);
    const std::size_t len = p.value.size() * sizeof(double);
    if (off + len > payload.size()) throw Error(what + ": payload truncated");
    std::memcpy(p.value.storage().data(), payload.data() + off, len);
    by_name.erase(it);
  }
  for (const auto& [name, e] : by_name) {
    const bool mine = prefix.empty() ? name.find('/') == std::string::npos : name.rfind(prefix, 0) == 0;
    if (mine) throw Error(what + ": unexpected tensor '" + name + "'");
  }
}

inline std::pair<json, std::string_view> split_checkpoint(const std::string& bytes,
                                                           const std::string& what) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error(what + ": not a checkpoint");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw Error(what + ": corrupt header (" + e.what() + ")");
  }
  if (header.value("format", "") != "thermonet-checkpoint" || header.value("version", 0) != 1) {
    throw Error(what + ": not a version 1 thermonet checkpoint");
  }
  std::string_view payload(bytes);
  payload.remove_prefix(nl + 1);
  if (sha256_hex(payload) != header.at("payload_sha256").get<std::string>()) {
    throw Error(what + ": payload hash mismatch");
  }
  return {header, payload};
}

inline std::string join_checkpoint(json header, const std::string& payload) {
  header["format"] = "thermonet-checkpoint";
  header["version"] = 1;
  header["payload_sha256"] = sha256_hex(payload);
  return header.dump() + "\n" + payload;
}

}  // namespace detail

inline std::string encode_recon(const models::ReconModel& m, const json& extra = json::object()) {
  std::string payload;
  json h;
  h["kind"] = "recon";
  h["recon_arch"] = m.arch().describe();
  h["tensors"] = detail::tensor_table(m.params(), "", payload);
  h["extra"] = extra;
  return detail::join_checkpoint(std::move(h), payload);
}

inline models::ReconModel decode_recon(const std::string& bytes, const std::string& what = "checkpoint") {
  auto [h, payload] = detail::split_checkpoint(bytes, what);
  if (h.at("kind") != "recon") throw Error(what + ": holds a " + h.at("kind").get<std::string>() + " model");
  models::ReconModel m(models::ReconArch::parse(h.at("recon_arch").get<std::string>()), 0);
  detail::restore(m.params(), "", h.at("tensors"), payload, what);
  return m;
}

inline std::string encode_predictor(const models::Predictor& p, const json& extra = json::object()) {
  std::string payload;
  json h;
  h["kind"] = "predictor";
  h["predictor_arch"] = p.arch().describe();
  h["target_mean"] = p.target_mean;
  h["target_std"] = p.target_std;
  h["stats_hash"] = p.stats_hash;
  json tensors = detail::tensor_table(p.params(), "", payload);
  if (p.encoder()) {
    h["recon_arch"] = p.encoder()->arch().describe();
    for (auto& e : detail::tensor_table(p.encoder()->params(), "encoder/", payload)) tensors.push_back(e);
  }
  h["tensors"] = std::move(tensors);
  h["extra"] = extra;
  return detail::join_checkpoint(std::move(h), payload);
}

inline models::Predictor decode_predictor(const std::string& bytes,
                                          const std::string& what = "checkpoint") {
  auto [h, payload] = detail::split_checkpoint(bytes, what);
  if (h.at("kind") != "predictor") {
    throw Error(what + ": holds a " + h.at("kind").get<std::string>() + " model");
  }
  std::optional<models::ReconModel> enc;
  if (h.contains("recon_arch")) {
    enc.emplace(models::ReconArch::parse(h.at("recon_arch").get<std::string>()), 0);
    detail::restore(enc->params(), "encoder/", h.at("tensors"), payload, what);
  }
  models::Predictor p(models::PredictorArch::parse(h.at("predictor_arch").get<std::string>()),
                      std::move(enc), 0);
  detail::restore(p.params(), "", h.at("tensors"), payload, what);
  p.target_mean = h.at("target_mean").get<std::array<double, 4>>();
  p.target_std = h.at("target_std").get<std::array<double, 4>>();
  p.stats_hash = h.at("stats_hash").get<std::string>();
  return p;
}

inline json checkpoint_extra(const std::string& bytes) {
  return detail::split_checkpoint(bytes, "checkpoint").first.value("extra", json::object());
}

// ---------------------------------------------------------------------------
// Synthetic builds on disk: layout.txt, job.cfg, frames.thvx, telemetry.csv,
// truth.csv per build directory.

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

inline std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(csv_split(line));
  return rows;
}

inline double to_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw Error(what + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline std::string format_job(const synth::JobConfig& c) {
  std::ostringstream os;
  os << "build_id = " << c.build_id << "\n"
     << "printer_id = " << c.printer_id << "\n"
     << "binder_level = " << exact(c.binder_level) << "\n"
     << "layer_thickness_um = " << exact(c.layer_thickness_um) << "\n"
     << "recycle_count = " << c.recycle_count << "\n"
     << "material = " << c.material << "\n"
     << "noise_amplitude = " << exact(c.noise_amplitude) << "\n"
     << "k1 = " << exact(c.k1) << "\n"
     << "k2 = " << exact(c.k2) << "\n"
     << "seed = " << c.seed << "\n"
     << "frames_per_layer = " << c.frames_per_layer << "\n";
  return os.str();
}

inline synth::JobConfig parse_job(const std::string& text, const std::string& source = "job.cfg") {
  const KeyValues kv = KeyValues::parse(text, source);
  kv.require_known({"build_id", "printer_id", "binder_level", "layer_thickness_um", "recycle_count",
                    "material", "noise_amplitude", "k1", "k2", "seed", "frames_per_layer"});
  auto need = [&](const char* k) {
    auto v = kv.get(k);
    if (!v) throw Error(source + ": missing key '" + k + "'");
    return *v;
  };
  auto num = [&](const char* k) { return detail::to_double(need(k), source + ": " + k); };
  synth::JobConfig c;
  c.build_id = static_cast<int>(num("build_id"));
  c.printer_id = static_cast<int>(num("printer_id"));
  c.binder_level = num("binder_level");
  c.layer_thickness_um = num("layer_thickness_um");
  c.recycle_count = static_cast<int>(num("recycle_count"));
  c.material = need("material");
  c.noise_amplitude = num("noise_amplitude");
  c.k1 = num("k1");
  c.k2 = num("k2");
  c.seed = std::stoull(need("seed"));
  c.frames_per_layer = static_cast<std::size_t>(num("frames_per_layer"));
  return c;
}

inline std::string format_telemetry(const std::vector<synth::TelemetryRecord>& recs) {
  std::string out;
  if (recs.empty()) return out;
  for (std::size_t i = 0; i < recs[0].fields.size(); ++i)
    out += (i ? "," : "") + detail::csv_field(recs[0].fields[i].first);
  out += "\n";
  for (const auto& r : recs) {
    for (std::size_t i = 0; i < r.fields.size(); ++i)
      out += (i ? "," : "") + detail::csv_field(r.fields[i].second);
    out += "\n";
  }
  return out;
}

inline std::vector<synth::TelemetryRecord> parse_telemetry(const std::string& text,
                                                           const std::string& source = "telemetry") {
  const auto rows = detail::csv_rows(text);
  std::vector<synth::TelemetryRecord> out;
  if (rows.empty()) return out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) {
      throw Error(source + ": row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                  " fields, header has " + std::to_string(rows[0].size()));
    }
    synth::TelemetryRecord rec;
    for (std::size_t i = 0; i < rows[0].size(); ++i) rec.fields.emplace_back(rows[0][i], rows[r][i]);
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string format_truths(const std::vector<synth::PartTruth>& truths) {
  std::string out = "part_id,clean_min_c,clean_mean_c,clean_max_c,length_mm,width_mm,height_mm,density_g_cm3\n";
  for (const auto& t : truths) {
    const auto& a = t.clean_aggregates;
    const auto& q = t.quality;
    out += std::to_string(t.part_id) + "," + exact(a.min) + "," + exact(a.mean) + "," + exact(a.max) +
           "," + exact(q.length) + "," + exact(q.width) + "," + exact(q.height) + "," +
           exact(q.density) + "\n";
  }
  return out;
}

inline std::vector<synth::PartTruth> parse_truths(const std::string& text,
                                                  const std::string& source = "truth.csv") {
  const auto rows = detail::csv_rows(text);
  std::vector<synth::PartTruth> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 8) throw Error(source + ": row " + std::to_string(r) + " needs 8 fields");
    std::array<double, 8> v{};
    for (std::size_t i = 0; i < 8; ++i) v[i] = detail::to_double(rows[r][i], source);
    synth::PartTruth t;
    t.part_id = static_cast<int>(v[0]);
    t.clean_aggregates = {v[1], v[2], v[3]};
    t.quality = {v[4], v[5], v[6], v[7]};
    out.push_back(t);
  }
  return out;
}

/// File name to content for one build directory.
inline std::map<std::string, std::string> encode_build(const synth::BuildData& b) {
  return {{"layout.txt", synth::format_layout(b.layout)},
          {"job.cfg", format_job(b.config)},
          {"frames.thvx", encode_blob(frames_blob(b.frames))},
          {"telemetry.csv", format_telemetry(b.telemetry)},
          {"truth.csv", format_truths(b.truths)}};
}

inline synth::BuildData load_build(const fs::path& dir) {
  synth::BuildData b;
  b.layout = synth::parse_layout(read_file(dir / "layout.txt"));
  b.config = parse_job(read_file(dir / "job.cfg"), (dir / "job.cfg").string());
  b.frames = frames_from_blob(decode_blob(read_file(dir / "frames.thvx"), (dir / "frames.thvx").string()),
                              b.config.frames_per_layer);
  if (b.frames.size() != b.layout.layers * b.config.frames_per_layer) {
    throw Error((dir / "frames.thvx").string() + ": frame count does not match layout");
  }
  b.telemetry = parse_telemetry(read_file(dir / "telemetry.csv"), (dir / "telemetry.csv").string());
  b.truths = parse_truths(read_file(dir / "truth.csv"), (dir / "truth.csv").string());
  if (b.telemetry.size() != b.layout.parts.size() || b.truths.size() != b.layout.parts.size()) {
    throw Error(dir.string() + ": telemetry or truth rows do not match the part count");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Manifests: a JSON document listing files with their SHA-256.

/// Verifies every file listed under manifest["files"] (path relative to
/// dir -> sha256).
inline void verify_files(const fs::path& dir, const json& manifest) {
  for (const auto& [rel, hash] : manifest.at("files").items()) {
    const fs::path p = dir / rel;
    if (!fs::exists(p)) throw Error("missing file '" + p.string() + "' listed in manifest");
    if (sha256_hex(read_file(p)) != hash.get<std::string>()) {
      throw Error("hash mismatch for '" + p.string() + "'");
    }
  }
}

/// Writes files plus manifest.json into a fresh staging directory, verifies
/// them, then swaps the staging directory into place.
inline void publish_directory(const fs::path& dir, const std::map<std::string, std::string>& files,
                              json manifest) {
  const fs::path stage = dir.string() + ".staging";
  std::error_code ec;
  fs::remove_all(stage, ec);
  json hashes = json::object();
  for (const auto& [rel, bytes] : files) {
    write_file_atomic(stage / rel, bytes);
    hashes[rel] = sha256_hex(bytes);
  }
  manifest["files"] = hashes;
  write_file_atomic(stage / "manifest.json", manifest.dump(2) + "\n");
  verify_files(stage, manifest);
  fs::remove_all(dir, ec);
  if (ec) throw Error("cannot replace '" + dir.string() + "': " + ec.message());
  fs::rename(stage, dir, ec);
  if (ec) throw Error("cannot move '" + stage.string() + "' into place: " + ec.message());
}

inline json load_manifest(const fs::path& dir, bool verify = true) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw Error("expected upstream artifact '" + p.string() + "' does not exist");
  json m;
  try {
    m = json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error(p.string() + ": corrupt manifest (" + e.what() + ")");
  }
  if (verify) verify_files(dir, m);
  return m;
}

// ---------------------------------------------------------------------------
// Datasets: records and statistics in the manifest, voxels as THVX blobs.

inline constexpr int kDatasetFormat = 1;

inline json stats_json(const prep::TabularStats& s) {
  json j = json::array();
  for (std::size_t i = 0; i < s.mean.size(); ++i) {
    j.push_back({{"name", i < s.names.size() ? s.names[i] : ""}, {"mean", s.mean[i]}, {"std", s.std[i]}});
  }
  return j;
}

/// Content hash of the standardization statistics; predictors refuse inputs
/// prepared with different statistics.
inline std::string stats_hash(const prep::TabularStats& s) { return sha256_hex(stats_json(s).dump()); }

inline std::string split_of(const prep::Splits& s, std::size_t i) {
  if (std::binary_search(s.train.begin(), s.train.end(), i)) return "train";
  if (std::binary_search(s.val.begin(), s.val.end(), i)) return "val";
  return "test";
}

inline std::pair<std::map<std::string, std::string>, json> encode_dataset(const prep::Dataset& d,
                                                                          const json& config) {
  std::map<std::string, std::string> files;
  json records = json::array();
  std::vector<std::size_t> test_sorted = d.splits.test;
  std::sort(test_sorted.begin(), test_sorted.end());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    const std::string id = r.key.str();
    json rec = {{"part", id},
                {"build", r.key.build},
                {"part_index", r.key.part},
                {"split", split_of(d.splits, i)},
                {"printer", r.printer_id},
                {"bed", {r.bed_x, r.bed_y, r.bed_z}},
                {"orientation", synth::to_string(r.orientation)},
                {"raw_features", r.raw_features},
                {"aggregates", {r.aggregates.min, r.aggregates.mean, r.aggregates.max}},
                {"target", r.target.as_array()},
                {"thermal", "voxels/" + id + ".thvx"}};
    files["voxels/" + id + ".thvx"] = encode_blob(thermal_blob(d.voxels.at(i)));
    if (!d.geometry.empty()) {
      rec["geometry"] = "geometry/" + id + ".thvx";
      files["geometry/" + id + ".thvx"] = encode_blob(geometry_blob(d.geometry.at(i)));
    }
    records.push_back(std::move(rec));
  }
  json m = {{"format_version", kDatasetFormat},
            {"seed", d.seed},
            {"axis_convention",
             "thermal THVX W=18 (part width), L=35 (part length), H=7 (layers, bottom first); "
             "geometry THVX W=x, L=y, H=z of the bed around the part centre"},
            {"feature_stats", stats_json(d.stats)},
            {"stats_hash", stats_hash(d.stats)},
            {"config", config},
            {"records", records}};
  return {std::move(files), std::move(m)};
}

inline void save_dataset(const fs::path& dir, const prep::Dataset& d, const json& config) {
  auto [files, manifest] = encode_dataset(d, config);
  publish_directory(dir, files, std::move(manifest));
}

/// Loads and verifies a dataset directory; every blob must match its hash.
inline prep::Dataset load_dataset(const fs::path& dir) {
  const json m = load_manifest(dir);
  if (m.value("format_version", 0) != kDatasetFormat) {
    throw Error(dir.string() + ": unsupported dataset format version");
  }
  prep::Dataset d;
  d.seed = m.at("seed").get<std::uint64_t>();
  for (const auto& s : m.at("feature_stats")) {
    d.stats.names.push_back(s.at("name").get<std::string>());
    d.stats.mean.push_back(s.at("mean").get<double>());
    d.stats.std.push_back(s.at("std").get<double>());
  }
  if (stats_hash(d.stats) != m.at("stats_hash").get<std::string>()) {
    throw Error(dir.string() + ": feature statistics do not match their recorded hash");
  }
  const auto& recs = m.at("records");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const json& j = recs[i];
    prep::PartRecord r;
    r.key = {j.at("build").get<int>(), j.at("part_index").get<int>()};
    r.printer_id = j.at("printer").get<int>();
    const auto bed = j.at("bed").get<std::array<double, 3>>();
    r.bed_x = bed[0];
    r.bed_y = bed[1];
    r.bed_z = bed[2];
    r.orientation = synth::parse_orientation(j.at("orientation").get<std::string>());
    r.raw_features = j.at("raw_features").get<std::vector<double>>();
    r.features = d.stats.apply(r.raw_features);
    const auto agg = j.at("aggregates").get<std::array<double, 3>>();
    r.aggregates = {agg[0], agg[1], agg[2]};
    r.target = synth::QualityVector::from_array(j.at("target").get<std::array<double, 4>>());
    const std::string split = j.at("split").get<std::string>();
    (split == "train" ? d.splits.train : split == "val" ? d.splits.val : d.splits.test).push_back(i);

    const std::string tpath = j.at("thermal").get<std::string>();
    prep::ThermalVoxel v;
    v.key = r.key;
    v.printer_id = r.printer_id;
    v.values = thermal_values(decode_blob(read_file(dir / tpath), tpath), tpath);
    d.voxels.push_back(std::move(v));
    if (j.contains("geometry")) {
      const std::string gpath = j.at("geometry").get<std::string>();
      const VoxelBlob b = decode_blob(read_file(dir / gpath), gpath);
      if (b.dtype != DType::u8 || b.w != b.l || b.l != b.h) throw Error(gpath + ": expected a u8 cube");
      prep::GeometryVoxel gv;
      gv.key = r.key;
      gv.edge = b.w;
      gv.values = b.u8;
      d.geometry.push_back(std::move(gv));
    }
    d.records.push_back(std::move(r));
  }
  if (!d.geometry.empty() && d.geometry.size() != d.records.size()) {
    throw Error(dir.string() + ": geometry voxels missing for some parts");
  }
  return d;
}

}  // namespace thermonet::io
