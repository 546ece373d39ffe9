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

// Experiment commands. Every command reads one key-value config, works
// inside a workspace directory and publishes its outputs atomically:
//
//   synth/       builds (layout, job, frames, telemetry, truth)
//   dataset/     records, statistics, splits and voxel blobs
//   pretrain/    reconstruction checkpoints and ADP curves
//   train/<tag>/ predictor checkpoint and loss history per variant
//   eval/        summary, per-part, bed-density and correlation reports
//   sweep/       latent-size comparison
//   plots/       data exploration figures
//
// Each directory carries a manifest.json with SHA-256 hashes of its files
// and of the upstream manifest it was built from; downstream commands
// verify both before proceeding.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "thermonet/evalreport.hpp"
#include "thermonet/io.hpp"
#include "thermonet/models.hpp"
#include "thermonet/preprocess.hpp"
#include "thermonet/synthbed.hpp"

namespace thermonet::cli {

namespace fs = std::filesystem;
using io::json;
using models::EncoderMode;
using models::ReconKind;
using models::Variant;

// ---------------------------------------------------------------------------
// Settings

struct Settings {
  std::uint64_t seed = 7;
  synth::CampaignConfig campaign;
  prep::PipelineConfig pipeline;
  prep::SplitRatios split{0.81, 0.09, 0.10};
  models::TrainConfig train;
  ReconKind encoder_kind = ReconKind::VAE3D;
  std::vector<ReconKind> pretrain_kinds{ReconKind::AE, ReconKind::VAE3D};
  std::vector<Variant> variants{Variant::NoThermal, Variant::SequentialThermal, Variant::LatentThermal};
  std::vector<EncoderMode> encoder_modes{EncoderMode::frozen};
  std::vector<std::size_t> sweep_latents{5, 9, 20};
  std::size_t grid_x = 4;
  std::size_t grid_y = 3;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      const auto b = cur.find_first_not_of(' ');
      const auto e = cur.find_last_not_of(' ');
      if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (out.empty()) throw Error("empty list");
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (const auto& x : v) out += (out.empty() ? "" : ",") + f(x);
  return out;
}

inline std::uint64_t to_u64(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) throw Error("not an unsigned integer");
  return std::stoull(s);
}

inline std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

inline double to_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw Error("not a number");
  return v;
}

inline bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error("expected true or false");
}

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const Settings&)> get;
  std::function<void(Settings&, const std::string&)> set;
};

#define THERMONET_FIELD(KEY, EXPR, PARSE, PRINT)                                            \
  Field {                                                                                    \
    KEY, [](const Settings& s) { return PRINT(s.EXPR); },                                    \
        [](Settings& s, const std::string& v) { s.EXPR = PARSE(v); }                         \
  }

inline std::string size_str(std::size_t v) { return std::to_string(v); }
inline std::string u64_str(std::uint64_t v) { return std::to_string(v); }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      THERMONET_FIELD("seed", seed, to_u64, u64_str),
      THERMONET_FIELD("synth.builds", campaign.builds, to_size, size_str),
      THERMONET_FIELD("synth.parts_per_build", campaign.parts_per_build, to_size, size_str),
      THERMONET_FIELD("synth.printers", campaign.printers, to_size, size_str),
      THERMONET_FIELD("synth.layers", campaign.layers, to_size, size_str),
      THERMONET_FIELD("synth.frames_per_layer", campaign.frames_per_layer, to_size, size_str),
      THERMONET_FIELD("synth.noise", campaign.noise_amplitude, to_real, io::exact),
      THERMONET_FIELD("synth.k1", campaign.k1, to_real, io::exact),
      THERMONET_FIELD("synth.k2", campaign.k2, to_real, io::exact),
      THERMONET_FIELD("synth.density_noise", campaign.oracle.density_noise, to_real, io::exact),
      THERMONET_FIELD("synth.dim_noise_rel", campaign.oracle.dim_noise_rel, to_real, io::exact),
      THERMONET_FIELD("preprocess.geometry_roi", pipeline.geometry_roi, to_size, size_str),
      THERMONET_FIELD("preprocess.undistort", pipeline.undistort, to_bool, bool_str),
      THERMONET_FIELD("preprocess.dead_pixel_filter", pipeline.filter_dead_pixels, to_bool, bool_str),
      Field{"preprocess.fusing_index",
            [](const Settings& s) {
              return s.pipeline.fusing_index ? std::to_string(*s.pipeline.fusing_index) : std::string("last");
            },
            [](Settings& s, const std::string& v) {
              if (v == "last") s.pipeline.fusing_index.reset();
              else s.pipeline.fusing_index = to_size(v);
            }},
      THERMONET_FIELD("split.train", split.train, to_real, io::exact),
      THERMONET_FIELD("split.val", split.val, to_real, io::exact),
      THERMONET_FIELD("split.test", split.test, to_real, io::exact),
      THERMONET_FIELD("train.w1", train.w1, to_real, io::exact),
      THERMONET_FIELD("train.w2", train.w2, to_real, io::exact),
      THERMONET_FIELD("train.latent", train.latent, to_size, size_str),
      THERMONET_FIELD("train.lr", train.lr, to_real, io::exact),
      THERMONET_FIELD("train.batch", train.batch, to_size, size_str),
      THERMONET_FIELD("train.recon_epochs", train.recon_epochs, to_size, size_str),
      THERMONET_FIELD("train.predictor_epochs", train.predictor_epochs, to_size, size_str),
      THERMONET_FIELD("train.hidden", train.hidden, to_size, size_str),
      Field{"train.channels", [](const Settings& s) { return join(s.train.channels, size_str); },
            [](Settings& s, const std::string& v) {
              s.train.channels.clear();
              for (const auto& x : split_list(v)) s.train.channels.push_back(to_size(x));
            }},
      THERMONET_FIELD("train.encoder_mode", train.encoder_mode, models::parse_encoder_mode,
                      models::to_string),
      THERMONET_FIELD("train.activation", train.activation, models::parse_activation, models::to_string),
      THERMONET_FIELD("train.dense_bias", train.dense_bias, to_bool, bool_str),
      THERMONET_FIELD("train.encoder_kind", encoder_kind, models::parse_recon_kind, models::to_string),
      Field{"pretrain.kinds",
            [](const Settings& s) {
              return join(s.pretrain_kinds, [](ReconKind k) { return models::to_string(k); });
            },
            [](Settings& s, const std::string& v) {
              s.pretrain_kinds.clear();
              for (const auto& x : split_list(v)) s.pretrain_kinds.push_back(models::parse_recon_kind(x));
            }},
      Field{"eval.variants",
            [](const Settings& s) { return join(s.variants, [](Variant x) { return models::to_string(x); }); },
            [](Settings& s, const std::string& v) {
              s.variants.clear();
              for (const auto& x : split_list(v)) s.variants.push_back(models::parse_variant(x));
            }},
      Field{"eval.encoder_modes",
            [](const Settings& s) {
              return join(s.encoder_modes, [](EncoderMode m) { return models::to_string(m); });
            },
            [](Settings& s, const std::string& v) {
              s.encoder_modes.clear();
              for (const auto& x : split_list(v)) s.encoder_modes.push_back(models::parse_encoder_mode(x));
            }},
      Field{"sweep.latents", [](const Settings& s) { return join(s.sweep_latents, size_str); },
            [](Settings& s, const std::string& v) {
              s.sweep_latents.clear();
              for (const auto& x : split_list(v)) s.sweep_latents.push_back(to_size(x));
            }},
      THERMONET_FIELD("report.grid_x", grid_x, to_size, size_str),
      THERMONET_FIELD("report.grid_y", grid_y, to_size, size_str),
  };
  return f;
}

#undef THERMONET_FIELD

}  // namespace detail

inline std::vector<std::string> accepted_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(f.key);
  return keys;
}

inline void validate(const Settings& s) {
  s.train.validate();
  if (s.campaign.builds < 3) throw Error("config: synth.builds must be at least 3");
  if (s.campaign.parts_per_build == 0) throw Error("config: synth.parts_per_build must be > 0");
  if (s.campaign.printers == 0) throw Error("config: synth.printers must be > 0");
  if (s.train.channels.empty()) throw Error("config: train.channels must list at least one stage");
  if (s.grid_x == 0 || s.grid_y == 0) throw Error("config: report grid must be non-empty");
  for (std::size_t d : s.sweep_latents)
    if (d == 0) throw Error("config: sweep.latents entries must be > 0");
  const double sum = s.split.train + s.split.val + s.split.test;
  if (s.split.train <= 0 || s.split.val < 0 || s.split.test <= 0 || std::abs(sum - 1.0) > 1e-9) {
    throw Error("config: split.train/val/test must be positive (val may be 0) and sum to 1");
  }
}

inline Settings parse_settings(const io::KeyValues& kv) {
  kv.require_known(accepted_keys());
  Settings s;
  for (const auto& f : detail::fields()) {
    if (auto v = kv.get(f.key)) {
      try {
        f.set(s, *v);
      } catch (const std::exception& e) {
        throw Error("invalid value '" + *v + "' for config key '" + f.key + "': " + e.what());
      }
    }
  }
  s.campaign.seed = s.seed;
  s.train.seed = s.seed;
  validate(s);
  return s;
}

/// Every setting, one "key = value" line each, in a fixed order.
inline std::string echo(const Settings& s) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(s) + "\n";
  return out;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::size_t> latent;
  std::optional<std::string> encoder_mode;
};

inline Settings load_settings(const std::optional<fs::path>& config, const Overrides& o = {}) {
  io::KeyValues kv = config ? io::KeyValues::load(*config) : io::KeyValues{};
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.variant) kv.set("eval.variants", *o.variant);
  if (o.latent) kv.set("train.latent", std::to_string(*o.latent));
  if (o.encoder_mode) {
    kv.set("train.encoder_mode", *o.encoder_mode);
    kv.set("eval.encoder_modes", *o.encoder_mode);
  }
  return parse_settings(kv);
}

// ---------------------------------------------------------------------------
// Workspace helpers

namespace detail {

inline std::string manifest_hash(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw Error("expected upstream artifact '" + p.string() + "' does not exist");
  return io::sha256_hex(io::read_file(p));
}

inline json base_manifest(const std::string& kind, const Settings& s) {
  return {{"kind", kind}, {"format_version", 1}, {"config", echo(s)}};
}

/// Checks a downstream manifest against the current upstream manifest.
inline void require_fresh(const fs::path& dir, const json& m, const std::string& key, const fs::path& upstream) {
  if (m.at(key).get<std::string>() != manifest_hash(upstream)) {
    throw Error("'" + dir.string() + "' was built from a different '" + upstream.string() +
                "'; rerun the producing command");
  }
}

inline std::string variant_tag(Variant v, EncoderMode m) {
  return models::uses_encoder(v) ? models::to_string(v) + "-" + models::to_string(m) : models::to_string(v);
}

inline std::vector<std::pair<Variant, EncoderMode>> runs(const Settings& s) {
  std::vector<std::pair<Variant, EncoderMode>> out;
  for (Variant v : s.variants) {
    if (models::uses_encoder(v)) {
      for (EncoderMode m : s.encoder_modes) out.emplace_back(v, m);
    } else {
      out.emplace_back(v, s.encoder_modes.front());
    }
  }
  return out;
}

inline std::string row_label(Variant v, EncoderMode m, const Settings& s) {
  std::string l = models::table_label(v);
  if (models::uses_encoder(v) && s.encoder_modes.size() > 1) l += " (" + models::to_string(m) + " encoder)";
  return l;
}

inline std::string pretrain_name(bool geometry, ReconKind k) {
  return std::string(geometry ? "geometry_" : "recon_") + models::to_string(k) + ".ckpt";
}

struct Loaded {
  prep::Dataset data;
  std::string stats_hash;
  std::shared_ptr<const models::VoxelSet> thermal;
  std::shared_ptr<const models::VoxelSet> geometry;  // null without geometry
};

inline Loaded load_workspace_dataset(const fs::path& out) {
  Loaded l;
  const fs::path dir = out / "dataset";
  l.data = io::load_dataset(dir);
  l.stats_hash = io::stats_hash(l.data.stats);
  l.thermal = std::make_shared<const models::VoxelSet>(models::VoxelSet::thermal(l.data));
  if (!l.data.geometry.empty()) {
    l.geometry = std::make_shared<const models::VoxelSet>(models::VoxelSet::geometry(l.data));
  }
  return l;
}

inline std::shared_ptr<const models::VoxelSet> voxels_for(Variant v, const Loaded& l) {
  if (v != Variant::GeometryLatent) return l.thermal;
  if (!l.geometry) throw Error("variant GeometryLatent needs geometry voxels; set preprocess.geometry_roi");
  return l.geometry;
}

inline std::string history_csv(const models::TrainHistory& h) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + report::fmt(h.train_loss[e]) + ",";
    if (e < h.val_loss.size()) out += report::fmt(h.val_loss[e]);
    out += "\n";
  }
  return out;
}

/// Test-split rows for a trained predictor.
inline report::VariantResult evaluate_rows(models::Predictor& p, const Loaded& l, Variant v,
                                           const std::string& name, const std::string& label) {
  const auto& d = l.data;
  const auto voxels = voxels_for(v, l);
  const auto in = models::make_inputs(d, voxels, l.stats_hash);
  const auto& idx = d.splits.test;
  if (idx.size() < 2) throw Error("evaluation: test split has fewer than 2 parts");
  const auto preds = models::predict(p, in, idx);
  std::vector<std::vector<double>> recon;
  if (p.encoder()) recon = p.encoder()->reconstruct(*voxels, idx);
  report::VariantResult vr{name, label, {}};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& r = d.records[idx[i]];
    report::PartRow row;
    row.key = r.key;
    row.printer_id = r.printer_id;
    row.split = "test";
    row.bed_x = r.bed_x;
    row.bed_y = r.bed_y;
    row.truth = r.target;
    row.pred = preds[i];
    if (!recon.empty()) row.adp = metrics::adp(recon[i], voxels->values[idx[i]]);
    vr.rows.push_back(row);
  }
  return vr;
}

inline std::vector<report::CorrelationEntry> correlations(const prep::Dataset& d) {
  std::vector<double> tmin, tmean, dens, len;
  for (const auto& r : d.records) {
    tmin.push_back(r.aggregates.min);
    tmean.push_back(r.aggregates.mean);
    dens.push_back(r.target.density);
    len.push_back(r.target.length);
  }
  return {report::correlate("min_temp_c", tmin, "density_g_cm3", dens),
          report::correlate("mean_temp_c", tmean, "density_g_cm3", dens),
          report::correlate("mean_temp_c", tmean, "length_mm", len)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns a short human-readable summary.

inline std::string cmd_synth(const Settings& s, const fs::path& out) {
  std::map<std::string, std::string> files;
  std::size_t parts = 0;
  json builds = json::array();
  std::set<int> printers;
  for (std::size_t b = 0; b < s.campaign.builds; ++b) {
    const auto build = synth::generate_build(synth::random_layout(s.campaign, b), synth::job_for_build(s.campaign, b));
    char name[32];
    std::snprintf(name, sizeof name, "builds/b%03zu", b);
    for (auto& [f, bytes] : io::encode_build(build)) files[std::string(name) + "/" + f] = std::move(bytes);
    parts += build.layout.parts.size();
    printers.insert(build.config.printer_id);
    builds.push_back(name);
  }
  files["campaign.cfg"] = echo(s);
  json m = detail::base_manifest("synth", s);
  m["builds"] = builds;
  m["parts"] = parts;
  m["printers"] = printers;
  io::publish_directory(out / "synth", files, m);
  return "synth: " + std::to_string(s.campaign.builds) + " builds, " + std::to_string(parts) + " parts, " +
         std::to_string(printers.size()) + " printers -> " + (out / "synth").string();
}

inline std::string cmd_preprocess(const Settings& s, const fs::path& out) {
  const fs::path src = out / "synth";
  const json sm = io::load_manifest(src);
  std::vector<prep::PartSample> samples;
  for (const auto& b : sm.at("builds")) {
    auto part = prep::process_build(io::load_build(src / b.get<std::string>()), s.pipeline);
    for (auto& p : part) samples.push_back(std::move(p));
  }
  const prep::Dataset d = prep::assemble_dataset(std::move(samples), s.split, s.seed, s.campaign.printers);
  json cfg = {{"config", echo(s)}, {"synth_manifest", detail::manifest_hash(src)}};
  io::save_dataset(out / "dataset", d, cfg);
  return "preprocess: " + std::to_string(d.records.size()) + " parts (" + std::to_string(d.splits.train.size()) +
         " train / " + std::to_string(d.splits.val.size()) + " val / " + std::to_string(d.splits.test.size()) +
         " test), " + std::to_string(d.stats.mean.size()) + " tabular features" +
         (d.geometry.empty() ? "" : ", geometry ROI " + std::to_string(d.geometry.front().edge)) + " -> " +
         (out / "dataset").string();
}

struct PretrainResult {
  models::ReconModel model;
  models::ReconHistory history;
  double val_adp = 0.0, test_adp = 0.0, baseline_test_adp = 0.0;
};

inline PretrainResult pretrain_one(const models::VoxelSet& vs, const prep::Dataset& d, ReconKind kind,
                                   const models::TrainConfig& cfg) {
  const auto& sp = d.splits;
  PretrainResult r{models::build_recon_model(kind, cfg.latent, cfg.seed, cfg.channels, vs.dims, vs.lo, vs.hi),
                   {}, 0, 0, 0};
  r.history = models::pretrain_recon(r.model, vs, sp.train, sp.val, cfg);
  if (!sp.val.empty()) r.val_adp = models::recon_adp(r.model, vs, sp.val);
  r.test_adp = models::recon_adp(r.model, vs, sp.test);
  r.baseline_test_adp = models::mean_image_adp(vs, sp.train, sp.test);
  return r;
}

inline std::string cmd_pretrain(const Settings& s, const fs::path& out) {
  const auto l = detail::load_workspace_dataset(out);
  std::map<std::string, std::string> files;
  std::string table = "model,input,latent,val_adp,test_adp,baseline_test_adp,best_epoch\n";
  std::string summary = "pretrain:";
  auto run = [&](const models::VoxelSet& vs, bool geometry, const std::vector<ReconKind>& kinds) {
    std::vector<report::Curve> curves;
    for (ReconKind k : kinds) {
      PretrainResult r = pretrain_one(vs, l.data, k, s.train);
      const std::string input = geometry ? "geometry" : "thermal";
      json extra = {{"input", input}, {"test_adp", r.test_adp}, {"val_adp", r.val_adp}, {"config", echo(s)}};
      files[detail::pretrain_name(geometry, k)] = io::encode_recon(r.model, extra);
      table += models::to_string(k) + "," + input + "," + std::to_string(s.train.latent) + "," +
               report::fmt(r.val_adp) + "," + report::fmt(r.test_adp) + "," + report::fmt(r.baseline_test_adp) +
               "," + std::to_string(r.history.best_epoch + 1) + "\n";
      curves.push_back({models::to_string(k), r.history.val_adp});
      summary += " " + input + "/" + models::to_string(k) + " test ADP " + report::fmt(r.test_adp) +
                 " (mean-image baseline " + report::fmt(r.baseline_test_adp) + ");";
    }
    const std::string stem = geometry ? "geometry_adp" : "recon_adp";
    const std::string title = geometry ? "Geometry reconstruction accuracy (validation ADP, 0-255 units)"
                                       : "Thermal reconstruction accuracy (validation ADP, degC)";
    files[stem + ".csv"] = report::curves_csv(curves, "val_adp");
    files[stem + ".svg"] = report::curves_svg(curves, title, "val_adp");
  };
  run(*l.thermal, false, s.pretrain_kinds);
  if (l.geometry) run(*l.geometry, true, {s.encoder_kind});
  files["summary.csv"] = table;
  json m = detail::base_manifest("pretrain", s);
  m["dataset_manifest"] = detail::manifest_hash(out / "dataset");
  io::publish_directory(out / "pretrain", files, m);
  return summary + " -> " + (out / "pretrain").string();
}

inline models::ReconModel load_encoder(const Settings& s, const fs::path& out, bool geometry) {
  const fs::path dir = out / "pretrain";
  const json m = io::load_manifest(dir);
  detail::require_fresh(dir, m, "dataset_manifest", out / "dataset");
  const fs::path p = dir / detail::pretrain_name(geometry, s.encoder_kind);
  if (!fs::exists(p)) throw Error("expected upstream artifact '" + p.string() + "' does not exist");
  models::ReconModel enc = io::decode_recon(io::read_file(p), p.string());
  if (enc.arch().latent != s.train.latent) {
    throw Error("'" + p.string() + "' has latent size " + std::to_string(enc.arch().latent) +
                " but train.latent is " + std::to_string(s.train.latent) + "; rerun pretrain");
  }
  return enc;
}

inline std::string cmd_train(const Settings& s, const fs::path& out) {
  const auto l = detail::load_workspace_dataset(out);
  const auto& sp = l.data.splits;
  std::string summary = "train:";
  for (const auto& [v, mode] : detail::runs(s)) {
    models::TrainConfig cfg = s.train;
    cfg.encoder_mode = mode;
    std::optional<models::ReconModel> enc;
    std::string encoder_hash;
    if (models::uses_encoder(v)) {
      enc = load_encoder(s, out, v == Variant::GeometryLatent);
      encoder_hash = detail::manifest_hash(out / "pretrain");
    }
    const auto voxels = detail::voxels_for(v, l);
    const auto in = models::make_inputs(l.data, voxels, l.stats_hash);
    models::Predictor p =
        models::build_predictor(v, in.tabular.at(0).size(), std::move(enc), cfg, voxels->voxel_size());
    const auto h = models::train_predictor(p, in, sp.train, sp.val, cfg);
    const std::string tag = detail::variant_tag(v, mode);
    json m = detail::base_manifest("train", s);
    m["variant"] = models::to_string(v);
    m["encoder_mode"] = models::to_string(mode);
    m["dataset_manifest"] = detail::manifest_hash(out / "dataset");
    m["pretrain_manifest"] = encoder_hash;
    io::publish_directory(out / "train" / tag,
                          {{"model.ckpt", io::encode_predictor(p, {{"config", echo(s)}})},
                           {"history.csv", detail::history_csv(h)}},
                          m);
    summary += " " + tag + " best epoch " + std::to_string(h.best_epoch + 1) + ";";
  }
  return summary + " -> " + (out / "train").string();
}

inline models::Predictor load_predictor(const fs::path& out, const std::string& tag) {
  const fs::path dir = out / "train" / tag;
  const json m = io::load_manifest(dir);
  detail::require_fresh(dir, m, "dataset_manifest", out / "dataset");
  if (!m.at("pretrain_manifest").get<std::string>().empty()) {
    detail::require_fresh(dir, m, "pretrain_manifest", out / "pretrain");
  }
  return io::decode_predictor(io::read_file(dir / "model.ckpt"), (dir / "model.ckpt").string());
}

inline report::EvalReport build_report(const Settings& s, const fs::path& out) {
  const auto l = detail::load_workspace_dataset(out);
  report::EvalReport rep;
  rep.grid = {static_cast<double>(s.campaign.bed_w), static_cast<double>(s.campaign.bed_h), s.grid_x, s.grid_y};
  for (const auto& [v, mode] : detail::runs(s)) {
    const std::string tag = detail::variant_tag(v, mode);
    models::Predictor p = load_predictor(out, tag);
    rep.variants.push_back(detail::evaluate_rows(p, l, v, tag, detail::row_label(v, mode, s)));
  }
  rep.correlations = detail::correlations(l.data);
  return rep;
}

inline std::string cmd_eval(const Settings& s, const fs::path& out) {
  const report::EvalReport rep = build_report(s, out);
  std::map<std::string, std::string> files = {
      {"summary.csv", report::summary_csv(rep)},       {"summary.svg", report::summary_svg(rep)},
      {"per_part.csv", report::per_part_csv(rep)},     {"per_part.svg", report::per_part_svg(rep)},
      {"bed_density.csv", report::bed_density_csv(rep)}, {"bed_density.svg", report::bed_density_svg(rep)},
      {"correlation.csv", report::correlation_csv(rep)}, {"correlation.svg", report::correlation_svg(rep)}};
  json m = detail::base_manifest("eval", s);
  m["dataset_manifest"] = detail::manifest_hash(out / "dataset");
  io::publish_directory(out / "eval", files, m);
  std::string summary = "eval:";
  for (const auto& v : rep.variants) {
    const auto st = report::summarize(v);
    summary += " " + v.name + " L/W/H % error " + report::fmt(st.pct[0].mean) + "/" + report::fmt(st.pct[1].mean) +
               "/" + report::fmt(st.pct[2].mean) + ";";
  }
  return summary + " -> " + (out / "eval").string();
}

struct SweepRow {
  std::size_t latent = 0;
  double test_adp = 0.0;
  std::array<metrics::ErrorStats, 4> pct;
  double mean_dim_pct = 0.0;  // mean over length, width, height
};

/// Pretrains an encoder and trains a latent-fusion predictor for each
/// latent size, evaluating both on the test split.
inline std::vector<SweepRow> run_sweep(const Settings& s, const detail::Loaded& l,
                                       std::map<std::string, std::string>* files = nullptr) {
  std::vector<SweepRow> rows;
  const auto& sp = l.data.splits;
  for (std::size_t latent : s.sweep_latents) {
    models::TrainConfig cfg = s.train;
    cfg.latent = latent;
    PretrainResult pr = pretrain_one(*l.thermal, l.data, s.encoder_kind, cfg);
    const auto in = models::make_inputs(l.data, l.thermal, l.stats_hash);
    models::Predictor p = models::build_predictor(Variant::LatentThermal, in.tabular.at(0).size(),
                                                  std::move(pr.model), cfg);
    models::train_predictor(p, in, sp.train, sp.val, cfg);
    const auto vr = detail::evaluate_rows(p, l, Variant::LatentThermal, "d" + std::to_string(latent), "");
    const auto st = report::summarize(vr);
    SweepRow row{latent, pr.test_adp, st.pct, (st.pct[0].mean + st.pct[1].mean + st.pct[2].mean) / 3.0};
    rows.push_back(row);
    if (files) (*files)["latent_" + std::to_string(latent) + ".ckpt"] = io::encode_predictor(p);
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(report::kErrorNote) +
                    "latent,test_adp,length_pct_mean,width_pct_mean,height_pct_mean,density_pct_mean,mean_dim_pct\n";
  for (const auto& r : rows) {
    out += std::to_string(r.latent) + "," + report::fmt(r.test_adp);
    for (const auto& st : r.pct) out += "," + report::fmt(st.mean);
    out += "," + report::fmt(r.mean_dim_pct) + "\n";
  }
  return out;
}

inline std::string cmd_sweep(const Settings& s, const fs::path& out) {
  const auto l = detail::load_workspace_dataset(out);
  std::map<std::string, std::string> files;
  const auto rows = run_sweep(s, l, &files);
  files["sweep.csv"] = sweep_csv(rows);
  std::vector<report::Group> groups;
  std::vector<report::Curve> curves;
  report::Curve c{"mean dimensional % error", {}};
  for (const auto& r : rows) c.values.push_back(r.mean_dim_pct);
  curves.push_back(c);
  files["sweep.svg"] = report::curves_svg(curves, "Latent size sweep (x: entry in sweep.latents order)", "mean_dim_pct");
  json m = detail::base_manifest("sweep", s);
  m["dataset_manifest"] = detail::manifest_hash(out / "dataset");
  io::publish_directory(out / "sweep", files, m);
  double lo = INFINITY, hi = 0.0;
  std::string summary = "sweep:";
  for (const auto& r : rows) {
    lo = std::min(lo, r.mean_dim_pct);
    hi = std::max(hi, r.mean_dim_pct);
    summary += " d=" + std::to_string(r.latent) + " " + report::fmt(r.mean_dim_pct) + "%;";
  }
  return summary + " max/min " + report::fmt(hi / lo) + " -> " + (out / "sweep").string();
}

inline std::string cmd_plot(const Settings& s, const fs::path& out) {
  const auto l = detail::load_workspace_dataset(out);
  const auto& d = l.data;
  report::EvalReport rep;
  rep.correlations = detail::correlations(d);
  std::map<std::string, std::string> files = {{"correlation.csv", report::correlation_csv(rep)},
                                              {"correlation.svg", report::correlation_svg(rep)}};
  auto grouped = [&](const std::string& stem, const std::string& title, auto key) {
    std::map<std::string, std::vector<double>> by;
    for (std::size_t i = 0; i < d.records.size(); ++i) by[key(i)].push_back(d.records[i].aggregates.min);
    std::vector<report::Group> groups;
    for (auto& [k, v] : by) groups.push_back({k, std::move(v)});
    files[stem + ".csv"] = report::distribution_csv(groups);
    files[stem + ".svg"] = report::distribution_svg(groups, title, "min temp degC");
  };
  grouped("min_temp_by_split", "Part minimum temperature by split",
          [&](std::size_t i) { return io::split_of(d.splits, i); });
  grouped("min_temp_by_printer", "Part minimum temperature by printer",
          [&](std::size_t i) { return "P" + std::to_string(d.records[i].printer_id); });
  grouped("min_temp_by_build", "Part minimum temperature by build", [&](std::size_t i) {
    char b[16];
    std::snprintf(b, sizeof b, "B%03d", d.records[i].key.build);
    return std::string(b);
  });
  grouped("min_temp_by_orientation", "Part minimum temperature by orientation",
          [&](std::size_t i) { return synth::to_string(d.records[i].orientation); });
  json m = detail::base_manifest("plots", s);
  m["dataset_manifest"] = detail::manifest_hash(out / "dataset");
  io::publish_directory(out / "plots", files, m);
  return "plot: " + std::to_string(files.size()) + " files -> " + (out / "plots").string();
}

}  // namespace thermonet::cli
