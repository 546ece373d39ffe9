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

// Reconstruction models (AE, 3D-VAE) and the fusion predictors.
//
// Encoder: conv3d(k3, pad 1) + relu stages; an axis is halved (stride 2)
// while it is at least 8 long, otherwise kept (stride 1). The flattened
// feature map feeds a dense latent head (AE) or mu / logvar heads (VAE3D).
// Decoder: dense + relu back to the last feature map, then per stage a
// nearest upsample to the previous stage's extent and a conv3d, ending in
// one channel plus a per-voxel output bias.
//
// Predictors: an optional thermal branch and a tabular branch (two dense
// layers each), concatenated thermal-first, then a dense layer and a linear
// head emitting standardized (length, width, height, density). The hidden
// activation (relu or tanh) and whether dense layers carry biases are
// configurable.
//
// Per-sample objective, averaged over a batch:
//   L = sum_k (p_hat_k - p_k)^2 + w1 * sum_v (Re_v - T_v)^2 + w2 * KLD
// with voxels in normalized units.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "thermonet/autodiff.hpp"
#include "thermonet/metrics.hpp"
#include "thermonet/preprocess.hpp"

namespace thermonet::models {

using Real = double;
using ad::Graph;
using ad::ParamSet;
using ad::Shape;
using ad::Tensor;
using ad::Triple;
using ad::Var;
using synth::QualityVector;

enum class ReconKind { AE, VAE3D };
enum class Variant { NoThermal, SequentialThermal, LatentThermal, GeometryLatent };
enum class EncoderMode { frozen, finetune };
enum class Activation { relu, tanh };

inline std::string to_string(ReconKind k) { return k == ReconKind::AE ? "AE" : "VAE3D"; }

inline ReconKind parse_recon_kind(const std::string& s) {
  if (s == "AE") return ReconKind::AE;
  if (s == "VAE3D") return ReconKind::VAE3D;
  throw Error("unknown reconstruction kind '" + s + "' (accepted: AE, VAE3D)");
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::NoThermal: return "NoThermal";
    case Variant::SequentialThermal: return "SequentialThermal";
    case Variant::LatentThermal: return "LatentThermal";
    case Variant::GeometryLatent: return "GeometryLatent";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::NoThermal, Variant::SequentialThermal, Variant::LatentThermal,
                    Variant::GeometryLatent})
    if (s == to_string(v)) return v;
  throw Error("unknown variant '" + s +
              "' (accepted: NoThermal, SequentialThermal, LatentThermal, GeometryLatent)");
}

/// Row label used in summary tables.
inline std::string table_label(Variant v) {
  switch (v) {
    case Variant::NoThermal: return "Without thermal input";
    case Variant::SequentialThermal: return "With thermal sequential input";
    case Variant::LatentThermal: return "With thermal latent vector";
    case Variant::GeometryLatent: return "With geometry latent vector";
  }
  return "?";
}

inline bool uses_encoder(Variant v) {
  return v == Variant::LatentThermal || v == Variant::GeometryLatent;
}

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw Error("unknown activation '" + s + "' (accepted: relu, tanh)");
}

inline Var<Real> activate(Activation a, Var<Real> x) {
  return a == Activation::relu ? ad::relu(x) : ad::tanh(x);
}

inline std::string to_string(EncoderMode m) { return m == EncoderMode::frozen ? "frozen" : "finetune"; }

inline EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "frozen") return EncoderMode::frozen;
  if (s == "finetune") return EncoderMode::finetune;
  throw Error("unknown encoder mode '" + s + "' (accepted: frozen, finetune)");
}

struct TrainConfig {
  double w1 = 1.0;
  double w2 = 1e-3;
  std::size_t latent = 9;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t recon_epochs = 200;
  std::size_t predictor_epochs = 300;
  std::uint64_t seed = 0;
  EncoderMode encoder_mode = EncoderMode::frozen;
  std::size_t hidden = 32;
  std::vector<std::size_t> channels{4, 8, 16};
  Activation activation = Activation::relu;
  bool dense_bias = true;

  void validate() const {
    if (!(w1 >= 0.0) || !(w2 >= 0.0)) throw Error("train config: w1 and w2 must be >= 0");
    if (latent == 0) throw Error("train config: latent must be > 0");
    if (!(lr > 0.0)) throw Error("train config: lr must be > 0");
    if (batch == 0) throw Error("train config: batch must be > 0");
    if (hidden == 0) throw Error("train config: hidden must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Voxel inputs

/// Per-part grids in raw units (degC, or 0/255 for geometry) with the range
/// used to map them onto [0, 1].
struct VoxelSet {
  Triple dims{prep::kVoxelWidth, prep::kVoxelLength, prep::kVoxelHeight};
  double lo = 80.0;
  double hi = 220.0;
  std::vector<std::vector<double>> values;

  std::size_t size() const { return values.size(); }
  std::size_t voxel_size() const { return dims[0] * dims[1] * dims[2]; }
  double normalize(double v) const { return (v - lo) / (hi - lo); }
  double denormalize(double v) const { return lo + v * (hi - lo); }

  static VoxelSet thermal(const prep::Dataset& d, double t_min = 80.0, double t_max = 220.0) {
    VoxelSet s;
    s.lo = t_min;
    s.hi = t_max;
    s.values.reserve(d.voxels.size());
    for (const auto& v : d.voxels) s.values.push_back(v.values);
    return s;
  }

  static VoxelSet geometry(const prep::Dataset& d) {
    if (d.geometry.empty()) throw Error("dataset has no geometry voxels");
    VoxelSet s;
    const std::size_t e = d.geometry.front().edge;
    s.dims = {e, e, e};
    s.lo = 0.0;
    s.hi = 255.0;
    for (const auto& g : d.geometry) s.values.emplace_back(g.values.begin(), g.values.end());
    return s;
  }

  /// Normalized batch [B, 1, D, H, W].
  Tensor<Real> batch(std::span<const std::size_t> idx) const {
    const std::size_t v = voxel_size();
    Tensor<Real> t(Shape{idx.size(), 1, dims[0], dims[1], dims[2]});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& src = values.at(idx[b]);
      if (src.size() != v) throw Error("voxel set: grid " + std::to_string(idx[b]) + " has wrong size");
      for (std::size_t i = 0; i < v; ++i) t[b * v + i] = normalize(src[i]);
    }
    return t;
  }
};

// ---------------------------------------------------------------------------
// Reconstruction models

struct ReconArch {
  ReconKind kind = ReconKind::VAE3D;
  std::size_t latent = 9;
  Triple input{prep::kVoxelWidth, prep::kVoxelLength, prep::kVoxelHeight};
  std::vector<std::size_t> channels{4, 8, 16};
  double lo = 80.0;
  double hi = 220.0;

  void validate() const {
    if (latent == 0) throw Error("recon architecture: latent must be > 0");
    if (channels.empty()) throw Error("recon architecture: at least one conv stage required");
    for (std::size_t c : channels)
      if (c == 0) throw Error("recon architecture: zero channel count");
    for (std::size_t d : input)
      if (d == 0) throw Error("recon architecture: zero input extent");
    if (!(hi > lo)) throw Error("recon architecture: empty value range");
  }

  static std::size_t stride_for(std::size_t extent) { return extent >= 8 ? 2 : 1; }

  /// Spatial extents before the first stage and after each stage.
  std::vector<Triple> stage_dims() const {
    std::vector<Triple> out{input};
    for (std::size_t s = 0; s < channels.size(); ++s) {
      Triple next{};
      for (std::size_t a = 0; a < 3; ++a) {
        next[a] = ad::conv_out_extent(out.back()[a], 3, stride_for(out.back()[a]), 1);
      }
      out.push_back(next);
    }
    return out;
  }

  std::size_t flat_features() const {
    const Triple last = stage_dims().back();
    return channels.back() * last[0] * last[1] * last[2];
  }

  std::string describe() const {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << " latent=" << latent << " input=" << input[0] << 'x'
       << input[1] << 'x' << input[2] << " channels=";
    for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
    os << " range=" << lo << ',' << hi;
    return os.str();
  }

  static ReconArch parse(const std::string& text) {
    ReconArch a;
    std::istringstream in(text);
    std::string tok;
    bool seen_kind = false;
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw Error("recon architecture: malformed token '" + tok + "'");
      const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      try {
        if (k == "kind") {
          a.kind = parse_recon_kind(v);
          seen_kind = true;
        } else if (k == "latent") {
          a.latent = std::stoul(v);
        } else if (k == "input") {
          char x1 = 0, x2 = 0;
          std::istringstream vs(v);
          if (!(vs >> a.input[0] >> x1 >> a.input[1] >> x2 >> a.input[2]) || x1 != 'x' || x2 != 'x')
            throw Error("bad input extent '" + v + "'");
        } else if (k == "channels") {
          a.channels.clear();
          std::istringstream vs(v);
          std::string c;
          while (std::getline(vs, c, ',')) a.channels.push_back(std::stoul(c));
        } else if (k == "range") {
          const auto comma = v.find(',');
          if (comma == std::string::npos) throw Error("bad range '" + v + "'");
          a.lo = std::stod(v.substr(0, comma));
          a.hi = std::stod(v.substr(comma + 1));
        } else {
          throw Error("unknown field '" + k + "' (accepted: kind, latent, input, channels, range)");
        }
      } catch (const std::logic_error&) {
        throw Error("recon architecture: bad value for '" + k + "': '" + v + "'");
      }
    }
    if (!seen_kind) throw Error("recon architecture: missing kind");
    a.validate();
    return a;
  }
};

namespace detail {

inline Tensor<Real> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out,
                           std::uint64_t seed, const std::string& name) {
  Rng rng(seed, "init", thermonet::detail::fnv1a(name));
  return ad::glorot_uniform<Real>(std::move(shape), fan_in, fan_out, rng);
}

inline void add_dense(ParamSet<Real>& ps, const std::string& name, std::size_t in, std::size_t out,
                      std::uint64_t seed, bool zero = false, bool bias = true) {
  ps.add(name + ".w", zero ? Tensor<Real>(Shape{in, out}) : glorot({in, out}, in, out, seed, name));
  if (bias) ps.add(name + ".b", Tensor<Real>(Shape{out}));
}

inline void add_conv(ParamSet<Real>& ps, const std::string& name, std::size_t in, std::size_t out,
                     std::uint64_t seed) {
  ps.add(name + ".w", glorot({out, in, 3, 3, 3}, in * 27, out * 27, seed, name));
  ps.add(name + ".b", Tensor<Real>(Shape{out}));
}

inline Var<Real> dense_layer(Graph<Real>& g, ParamSet<Real>& ps, const std::string& name,
                             Var<Real> x) {
  const Var<Real> w = g.param(ps[name + ".w"]);
  if (!ps.contains(name + ".b")) return ad::dense(x, w);
  return ad::dense(x, w, g.param(ps[name + ".b"]));
}

inline std::size_t count_prefix(const ParamSet<Real>& ps, const std::string& prefix) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.at(i).name.rfind(prefix, 0) == 0) n += ps.at(i).value.size();
  return n;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace detail

class ReconModel {
 public:
  struct Encoded {
    Var<Real> mu;
    std::optional<Var<Real>> logvar;  // VAE3D only
  };
  struct Output {
    Encoded enc;
    Var<Real> z;
    Var<Real> recon;
  };

  ReconModel(ReconArch arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    const auto& ch = arch_.channels;
    for (std::size_t s = 0; s < ch.size(); ++s) {
      detail::add_conv(params_, "enc.conv" + std::to_string(s), s ? ch[s - 1] : 1, ch[s], seed);
    }
    const std::size_t flat = arch_.flat_features();
    if (arch_.kind == ReconKind::AE) {
      detail::add_dense(params_, "enc.latent", flat, arch_.latent, seed);
    } else {
      detail::add_dense(params_, "enc.mu", flat, arch_.latent, seed);
      detail::add_dense(params_, "enc.logvar", flat, arch_.latent, seed, /*zero=*/true);
    }
    detail::add_dense(params_, "dec.fc", arch_.latent, flat, seed);
    for (std::size_t s = ch.size(); s-- > 0;) {
      detail::add_conv(params_, "dec.conv" + std::to_string(s), ch[s], s ? ch[s - 1] : 1, seed);
    }
    params_.add("dec.out_bias", Tensor<Real>(Shape{1, arch_.input[0], arch_.input[1], arch_.input[2]}));
    // Input centering and residual spread, fitted on the train split before
    // pretraining and never updated by gradients. The identity until fitted.
    params_.add("norm.center", Tensor<Real>(Shape{1, arch_.input[0], arch_.input[1], arch_.input[2]}));
    params_.add("norm.spread", Tensor<Real>(Shape{1}, 1.0));
  }

  const ReconArch& arch() const { return arch_; }
  ParamSet<Real>& params() { return params_; }
  const ParamSet<Real>& params() const { return params_; }
  std::size_t encoder_param_count() const { return detail::count_prefix(params_, "enc."); }
  std::size_t decoder_param_count() const { return detail::count_prefix(params_, "dec."); }

  /// x: normalized [N, 1, D, H, W].
  Encoded encode(Graph<Real>& g, Var<Real> x) {
    const auto dims = arch_.stage_dims();
    Tensor<Real> shift = params_["norm.center"].value;
    for (Real& v : shift.storage()) v = -v;
    Var<Real> h = ad::scale(ad::add_bias(x, g.leaf(std::move(shift))), Real{1} / params_["norm.spread"].value[0]);
    for (std::size_t s = 0; s < arch_.channels.size(); ++s) {
      const std::string n = "enc.conv" + std::to_string(s);
      Triple stride{};
      for (std::size_t a = 0; a < 3; ++a) stride[a] = ReconArch::stride_for(dims[s][a]);
      h = ad::relu(ad::conv3d(h, g.param(params_[n + ".w"]), g.param(params_[n + ".b"]), stride,
                              {1, 1, 1}));
    }
    const Var<Real> f = ad::flatten(h, 1);
    if (arch_.kind == ReconKind::AE) return {detail::dense_layer(g, params_, "enc.latent", f), {}};
    return {detail::dense_layer(g, params_, "enc.mu", f),
            detail::dense_layer(g, params_, "enc.logvar", f)};
  }

  Var<Real> decode(Graph<Real>& g, Var<Real> z) {
    const auto dims = arch_.stage_dims();
    const auto& ch = arch_.channels;
    const std::size_t n = z.shape()[0];
    Var<Real> h = ad::relu(detail::dense_layer(g, params_, "dec.fc", z));
    h = ad::reshape(h, Shape{n, ch.back(), dims.back()[0], dims.back()[1], dims.back()[2]});
    for (std::size_t s = ch.size(); s-- > 0;) {
      const std::string name = "dec.conv" + std::to_string(s);
      h = ad::upsample_nearest(h, dims[s]);
      h = ad::conv3d(h, g.param(params_[name + ".w"]), g.param(params_[name + ".b"]), {1, 1, 1},
                     {1, 1, 1});
      if (s > 0) h = ad::relu(h);
    }
    return ad::add_bias(ad::scale(h, params_["norm.spread"].value[0]), g.param(params_["dec.out_bias"]));
  }

  /// Full pass; eps == nullptr uses z = mu (the deterministic path).
  Output forward(Graph<Real>& g, Var<Real> x, const Tensor<Real>* eps = nullptr) {
    Encoded e = encode(g, x);
    Var<Real> z = e.mu;
    if (eps && e.logvar) z = ad::reparameterize(e.mu, *e.logvar, *eps);
    return {e, z, decode(g, z)};
  }

  /// Deterministic latent (mu) for each listed grid, [n, latent].
  Tensor<Real> latents(const VoxelSet& vs, std::span<const std::size_t> idx,
                       std::size_t batch = 32) {
    Tensor<Real> out(Shape{idx.size(), arch_.latent});
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
      const auto chunk = idx.subspan(b0, std::min(batch, idx.size() - b0));
      Graph<Real> g;
      const Encoded e = encode(g, g.leaf(vs.batch(chunk)));
      std::copy(e.mu.value().storage().begin(), e.mu.value().storage().end(),
                out.storage().begin() + static_cast<long>(b0 * arch_.latent));
    }
    return out;
  }

  /// Reconstructions in raw units along the deterministic path.
  std::vector<std::vector<double>> reconstruct(const VoxelSet& vs, std::span<const std::size_t> idx,
                                               std::size_t batch = 32) {
    std::vector<std::vector<double>> out;
    const std::size_t v = vs.voxel_size();
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
      const auto chunk = idx.subspan(b0, std::min(batch, idx.size() - b0));
      Graph<Real> g;
      const Output o = forward(g, g.leaf(vs.batch(chunk)));
      const auto& r = o.recon.value().storage();
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        std::vector<double> grid(v);
        for (std::size_t k = 0; k < v; ++k) grid[k] = vs.denormalize(r[i * v + k]);
        out.push_back(std::move(grid));
      }
    }
    return out;
  }

 private:
  ReconArch arch_;
  ParamSet<Real> params_;
};

inline ReconModel build_recon_model(ReconKind kind, std::size_t latent, std::uint64_t seed,
                                    std::vector<std::size_t> channels = {4, 8, 16},
                                    Triple input = {prep::kVoxelWidth, prep::kVoxelLength,
                                                    prep::kVoxelHeight},
                                    double lo = 80.0, double hi = 220.0) {
  ReconArch a;
  a.kind = kind;
  a.latent = latent;
  a.channels = std::move(channels);
  a.input = input;
  a.lo = lo;
  a.hi = hi;
  return ReconModel(std::move(a), seed);
}

/// Mean per-part ADP (raw units) of the deterministic reconstructions.
inline double recon_adp(ReconModel& m, const VoxelSet& vs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw Error("recon_adp: empty split");
  const auto rec = m.reconstruct(vs, idx);
  double acc = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) acc += metrics::adp(rec[i], vs.values[idx[i]]);
  return acc / static_cast<double>(idx.size());
}

/// Per-voxel mean of the listed grids (raw units).
inline std::vector<double> mean_image(const VoxelSet& vs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw Error("mean_image: empty split");
  std::vector<double> m(vs.voxel_size(), 0.0);
  for (std::size_t i : idx)
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += vs.values[i][k];
  for (double& v : m) v /= static_cast<double>(idx.size());
  return m;
}

/// ADP on `eval` of a predictor that always outputs the `train` mean image.
inline double mean_image_adp(const VoxelSet& vs, std::span<const std::size_t> train,
                             std::span<const std::size_t> eval) {
  const auto m = mean_image(vs, train);
  double acc = 0.0;
  for (std::size_t i : eval) acc += metrics::adp(m, vs.values[i]);
  return acc / static_cast<double>(eval.size());
}

/// Batch-mean of sum_v (Re_v - T_v)^2 + w2 * KLD (KLD only for VAE3D).
inline Var<Real> recon_objective(Graph<Real>& g, ReconModel& model, Var<Real> x,
                                 const Tensor<Real>* eps, double w2) {
  const auto out = model.forward(g, x, eps);
  const Real voxels = static_cast<Real>(x.value().size() / x.shape()[0]);
  Var<Real> loss = ad::scale(ad::mse(out.recon, x), voxels);
  if (out.enc.logvar && w2 > 0.0) {
    const Real n = static_cast<Real>(x.shape()[0]);
    loss = ad::add(loss, ad::scale(ad::kld(out.enc.mu, *out.enc.logvar), static_cast<Real>(w2) / n));
  }
  return loss;
}

struct ReconHistory {
  std::vector<double> train_loss;  // per epoch, mean batch objective
  std::vector<double> val_adp;     // per epoch, raw units
  std::size_t best_epoch = 0;
};

/// Minimizes sum_v (Re_v - T_v)^2 (+ w2 * KLD for VAE3D) per sample with Adam.
/// The parameters of the epoch with the lowest validation ADP are kept.
using EpochHook = std::function<void(std::size_t epoch, double train_loss)>;

inline ReconHistory pretrain_recon(ReconModel& model, const VoxelSet& vs,
                                   std::span<const std::size_t> train,
                                   std::span<const std::size_t> val, const TrainConfig& cfg,
                                   const EpochHook& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw Error("pretrain_recon: empty training split");
  if (vs.dims != model.arch().input) throw Error("pretrain_recon: voxel extent does not match model input");
  // Data-dependent start: a fresh (all-zero) output bias begins at the
  // training mean image. Resumed models keep theirs.
  auto& ob = model.params()["dec.out_bias"].value;
  if (std::all_of(ob.storage().begin(), ob.storage().end(), [](Real v) { return v == 0.0; })) {
    const auto m = mean_image(vs, train);
    auto& center = model.params()["norm.center"].value;
    for (std::size_t k = 0; k < m.size(); ++k) center[k] = ob[k] = vs.normalize(m[k]);
    // Residuals around the mean image are small in normalized units; the
    // encoder sees them at unit spread and the decoder emits them rescaled.
    double ss = 0.0;
    for (std::size_t i : train)
      for (std::size_t k = 0; k < m.size(); ++k) ss += std::pow(vs.normalize(vs.values[i][k]) - center[k], 2);
    const double spread = std::sqrt(ss / static_cast<double>(train.size() * m.size()));
    if (spread > 1e-6) model.params()["norm.spread"].value[0] = static_cast<Real>(spread);
  }
  const bool vae = model.arch().kind == ReconKind::VAE3D;
  ad::AdamState<Real> adam(model.params(), ad::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(train.begin(), train.end());
  ReconHistory h;
  double best = std::numeric_limits<double>::infinity();
  ParamSet<Real> best_params = model.params().clone();
  for (std::size_t epoch = 0; epoch < cfg.recon_epochs; ++epoch) {
    Rng shuffle(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch, ++batches) {
      const std::span<const std::size_t> chunk(order.data() + b0,
                                               std::min(cfg.batch, order.size() - b0));
      model.params().zero_grad();
      Graph<Real> g;
      const Var<Real> x = g.leaf(vs.batch(chunk));
      std::optional<Tensor<Real>> eps;
      if (vae) {
        Rng er(cfg.seed, "reparameterize", epoch, batches);
        eps = ad::standard_normal<Real>({chunk.size(), model.arch().latent}, er);
      }
      const Var<Real> loss = recon_objective(g, model, x, eps ? &*eps : nullptr, cfg.w2);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw Error("pretrain_recon: non-finite loss at epoch " + std::to_string(epoch) +
                    " batch " + std::to_string(batches));
      }
      g.backward(loss);
      ad::adam_step(model.params(), adam);
      total += lv;
    }
    h.train_loss.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, h.train_loss.back());
    if (!val.empty()) {
      const double a = recon_adp(model, vs, val);
      h.val_adp.push_back(a);
      if (a < best) {
        best = a;
        h.best_epoch = epoch;
        best_params = model.params().clone();
      }
    }
  }
  if (!val.empty() && cfg.recon_epochs > 0) {
    for (std::size_t i = 0; i < best_params.size(); ++i)
      model.params().at(i).value = best_params.at(i).value;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Predictors

struct PredictorArch {
  Variant variant = Variant::NoThermal;
  std::size_t tabular_width = 0;
  std::size_t thermal_width = 0;  // 0, voxel count, or latent size
  std::size_t hidden = 32;
  Activation activation = Activation::relu;
  bool bias = true;

  std::size_t first_layer_width() const { return thermal_width + tabular_width; }

  void validate() const {
    if (tabular_width == 0) throw Error("predictor architecture: tabular width must be > 0");
    if (hidden == 0) throw Error("predictor architecture: hidden width must be > 0");
    if ((variant == Variant::NoThermal) != (thermal_width == 0)) {
      throw Error("predictor architecture: thermal width " + std::to_string(thermal_width) +
                  " inconsistent with variant " + to_string(variant));
    }
  }

  std::string describe() const {
    std::ostringstream os;
    os << "variant=" << to_string(variant) << " tabular=" << tabular_width
       << " thermal=" << thermal_width << " hidden=" << hidden
       << " activation=" << to_string(activation) << " bias=" << (bias ? 1 : 0);
    return os.str();
  }

  static PredictorArch parse(const std::string& text) {
    PredictorArch a;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw Error("predictor architecture: malformed token '" + tok + "'");
      const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      try {
        if (k == "variant") a.variant = parse_variant(v);
        else if (k == "tabular") a.tabular_width = std::stoul(v);
        else if (k == "thermal") a.thermal_width = std::stoul(v);
        else if (k == "hidden") a.hidden = std::stoul(v);
        else if (k == "activation") a.activation = parse_activation(v);
        else if (k == "bias") {
          if (v != "0" && v != "1") throw std::invalid_argument(v);
          a.bias = v == "1";
        } else {
          throw Error("unknown field '" + k +
                      "' (accepted: variant, tabular, thermal, hidden, activation, bias)");
        }
      } catch (const std::logic_error&) {
        throw Error("predictor architecture: bad value for '" + k + "': '" + v + "'");
      }
    }
    a.validate();
    return a;
  }
};

/// Inputs for training or inference: standardized tabular rows, optional
/// voxel grids, targets in physical units (may be empty for inference) and
/// the hash of the statistics used to standardize the rows.
struct PredictorInputs {
  std::vector<std::vector<double>> tabular;
  std::shared_ptr<const VoxelSet> voxels;
  std::vector<QualityVector> targets;
  std::string stats_hash;

  std::size_t size() const { return tabular.size(); }
};

inline PredictorInputs make_inputs(const prep::Dataset& d, std::shared_ptr<const VoxelSet> voxels,
                                   std::string stats_hash) {
  PredictorInputs in;
  for (const auto& r : d.records) {
    in.tabular.push_back(r.features);
    in.targets.push_back(r.target);
  }
  in.voxels = std::move(voxels);
  in.stats_hash = std::move(stats_hash);
  return in;
}

struct LossTerms {
  double pred = 0.0;   // mean over samples of the summed squared standardized error
  double recon = 0.0;  // mean over samples of the summed squared voxel error
  double kld = 0.0;    // mean over samples
  double total = 0.0;  // fused objective
};

class Predictor {
 public:
  Predictor(PredictorArch arch, std::optional<ReconModel> encoder, std::uint64_t seed)
      : arch_(arch), encoder_(std::move(encoder)) {
    arch_.validate();
    if (uses_encoder(arch_.variant)) {
      if (!encoder_) {
        throw Error("build_predictor: variant " + to_string(arch_.variant) +
                    " requires a pretrained encoder");
      }
      if (encoder_->arch().latent != arch_.thermal_width) {
        throw Error("build_predictor: encoder latent " + std::to_string(encoder_->arch().latent) +
                    " does not match thermal width " + std::to_string(arch_.thermal_width));
      }
    } else {
      encoder_.reset();
    }
    const std::size_t h = arch_.hidden;
    const bool b = arch_.bias;
    if (arch_.thermal_width) {
      detail::add_dense(params_, "thermal.fc0", arch_.thermal_width, h, seed, false, b);
      detail::add_dense(params_, "thermal.fc1", h, h, seed, false, b);
    }
    detail::add_dense(params_, "tab.fc0", arch_.tabular_width, h, seed, false, b);
    detail::add_dense(params_, "tab.fc1", h, h, seed, false, b);
    detail::add_dense(params_, "head.fc0", arch_.thermal_width ? 2 * h : h, h, seed, false, b);
    detail::add_dense(params_, "head.out", h, 4, seed, false, b);
    if (arch_.variant == Variant::SequentialThermal) {
      // Flattened-voxel centering and residual spread, fitted on the train
      // split; never updated by gradients.
      params_.add("norm.center", Tensor<Real>(Shape{arch_.thermal_width}));
      params_.add("norm.spread", Tensor<Real>(Shape{1}, 1.0));
    }
  }

  const PredictorArch& arch() const { return arch_; }
  ParamSet<Real>& params() { return params_; }
  const ParamSet<Real>& params() const { return params_; }
  std::optional<ReconModel>& encoder() { return encoder_; }
  const std::optional<ReconModel>& encoder() const { return encoder_; }

  std::array<double, 4> target_mean{0, 0, 0, 0};
  std::array<double, 4> target_std{1, 1, 1, 1};
  std::string stats_hash;

  /// Branches and head on already-formed inputs; thermal may be absent.
  Var<Real> head(Graph<Real>& g, std::optional<Var<Real>> thermal, Var<Real> tabular) {
    const Activation act = arch_.activation;
    Var<Real> t = activate(act, detail::dense_layer(g, params_, "tab.fc0", tabular));
    t = activate(act, detail::dense_layer(g, params_, "tab.fc1", t));
    Var<Real> joined = t;
    if (arch_.thermal_width) {
      if (!thermal) throw Error("predictor: thermal input missing");
      Var<Real> th = activate(act, detail::dense_layer(g, params_, "thermal.fc0", *thermal));
      th = activate(act, detail::dense_layer(g, params_, "thermal.fc1", th));
      joined = ad::concat(th, t);
    }
    const Var<Real> u = activate(act, detail::dense_layer(g, params_, "head.fc0", joined));
    return detail::dense_layer(g, params_, "head.out", u);
  }

  std::array<double, 4> standardize(const QualityVector& q) const {
    const auto a = q.as_array();
    std::array<double, 4> z{};
    // A zero std marks a target that was constant on the train split.
    for (std::size_t k = 0; k < 4; ++k)
      z[k] = target_std[k] > 0.0 ? (a[k] - target_mean[k]) / target_std[k] : 0.0;
    return z;
  }

  QualityVector denormalize(const double* z) const {
    std::array<double, 4> a{};
    for (std::size_t k = 0; k < 4; ++k) a[k] = z[k] * target_std[k] + target_mean[k];
    return QualityVector::from_array(a);
  }

 private:
  PredictorArch arch_;
  std::optional<ReconModel> encoder_;
  ParamSet<Real> params_;
};

inline Predictor build_predictor(Variant v, std::size_t tabular_width,
                                 std::optional<ReconModel> encoder, const TrainConfig& cfg,
                                 std::size_t voxel_size = prep::kVoxelSize) {
  PredictorArch a;
  a.variant = v;
  a.tabular_width = tabular_width;
  a.hidden = cfg.hidden;
  a.activation = cfg.activation;
  a.bias = cfg.dense_bias;
  if (v == Variant::SequentialThermal) a.thermal_width = voxel_size;
  if (uses_encoder(v)) {
    if (!encoder) {
      throw Error("build_predictor: variant " + to_string(v) + " requires a pretrained encoder");
    }
    a.thermal_width = encoder->arch().latent;
  }
  return Predictor(a, std::move(encoder), cfg.seed);
}

namespace detail {

/// Per-sample quantities of a frozen encoder, computed once.
struct FrozenCache {
  Tensor<Real> mu;              // [n, d]
  std::vector<double> recon;    // summed squared voxel error, normalized units
  std::vector<double> kld;
};

inline FrozenCache frozen_cache(ReconModel& enc, const VoxelSet& vs, std::size_t batch = 32) {
  const std::size_t n = vs.size(), d = enc.arch().latent, v = vs.voxel_size();
  FrozenCache c{Tensor<Real>(Shape{n, d}), std::vector<double>(n), std::vector<double>(n, 0.0)};
  const auto all = iota(n);
  for (std::size_t b0 = 0; b0 < n; b0 += batch) {
    const std::span<const std::size_t> chunk(all.data() + b0, std::min(batch, n - b0));
    Graph<Real> g;
    const Tensor<Real> x = vs.batch(chunk);
    const auto o = enc.forward(g, g.leaf(x));
    const auto& mu = o.enc.mu.value().storage();
    const auto& r = o.recon.value().storage();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const std::size_t s = b0 + i;
      for (std::size_t k = 0; k < d; ++k) c.mu[s * d + k] = mu[i * d + k];
      double sse = 0.0;
      for (std::size_t k = 0; k < v; ++k) sse += (r[i * v + k] - x[i * v + k]) * (r[i * v + k] - x[i * v + k]);
      c.recon[s] = sse;
      if (o.enc.logvar) {
        const auto& lv = o.enc.logvar->value().storage();
        double kl = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double m = mu[i * d + k], l = lv[i * d + k];
          kl += m * m + std::exp(l) - l - 1.0;
        }
        c.kld[s] = 0.5 * kl;
      }
    }
  }
  return c;
}

struct BatchGraph {
  Var<Real> pred_term, recon_term, kld_term, total, pred;
};

}  // namespace detail

/// Forward pass of a batch with the objective attached. In frozen mode (or
/// without an encoder) the reconstruction and KLD terms are constants taken
/// from `cache`; otherwise they flow through the encoder/decoder graph.
inline detail::BatchGraph predictor_batch(Graph<Real>& g, Predictor& p, const PredictorInputs& in,
                                          std::span<const std::size_t> idx, const TrainConfig& cfg,
                                          const detail::FrozenCache* cache, const Tensor<Real>* eps,
                                          bool with_targets) {
  const std::size_t n = idx.size();
  const std::size_t tw = p.arch().tabular_width;
  Tensor<Real> tab(Shape{n, tw});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = in.tabular.at(idx[i]);
    if (row.size() != tw) {
      throw Error("predictor: tabular row has " + std::to_string(row.size()) + " features, model expects " +
                  std::to_string(tw));
    }
    std::copy(row.begin(), row.end(), tab.storage().begin() + static_cast<long>(i * tw));
  }
  const Var<Real> tabular = g.leaf(std::move(tab));
  std::optional<Var<Real>> thermal;
  std::optional<Var<Real>> recon_term, kld_term;
  const Variant v = p.arch().variant;
  if (v == Variant::SequentialThermal) {
    if (!in.voxels) throw Error("predictor: SequentialThermal needs voxel inputs");
    Tensor<Real> x = in.voxels->batch(idx).reshaped(Shape{n, in.voxels->voxel_size()});
    const auto& center = p.params()["norm.center"].value;
    const Real inv = Real{1} / p.params()["norm.spread"].value[0];
    const std::size_t w = center.size();
    if (x.size() != n * w) throw Error("predictor: voxel size does not match the sequential input width");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < w; ++k) x[i * w + k] = (x[i * w + k] - center[k]) * inv;
    thermal = g.leaf(std::move(x));
  } else if (uses_encoder(v)) {
    if (cache) {
      const std::size_t d = p.arch().thermal_width;
      Tensor<Real> mu(Shape{n, d});
      double rs = 0.0, ks = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) mu[i * d + k] = cache->mu[idx[i] * d + k];
        rs += cache->recon[idx[i]];
        ks += cache->kld[idx[i]];
      }
      thermal = g.leaf(std::move(mu));
      recon_term = g.leaf(Tensor<Real>::scalar(rs / static_cast<double>(n)));
      kld_term = g.leaf(Tensor<Real>::scalar(ks / static_cast<double>(n)));
    } else {
      if (!in.voxels) throw Error("predictor: " + to_string(v) + " needs voxel inputs");
      const Var<Real> x = g.leaf(in.voxels->batch(idx));
      if (!with_targets) {
        detail::BatchGraph out;
        out.pred = p.head(g, p.encoder()->encode(g, x).mu, tabular);
        return out;
      }
      auto o = p.encoder()->forward(g, x, eps);
      thermal = o.z;
      recon_term = ad::scale(ad::mse(o.recon, x), static_cast<Real>(in.voxels->voxel_size()));
      if (o.enc.logvar) {
        kld_term = ad::scale(ad::kld(o.enc.mu, *o.enc.logvar), Real{1} / static_cast<Real>(n));
      }
    }
  }
  detail::BatchGraph out;
  out.pred = p.head(g, thermal, tabular);
  if (!with_targets) return out;
  Tensor<Real> target(Shape{n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = p.standardize(in.targets.at(idx[i]));
    for (std::size_t k = 0; k < 4; ++k) target[i * 4 + k] = z[k];
  }
  out.pred_term = ad::scale(ad::mse(out.pred, g.leaf(std::move(target))), Real{4});
  out.recon_term = recon_term ? *recon_term : g.leaf(Tensor<Real>::scalar(0.0));
  out.kld_term = kld_term ? *kld_term : g.leaf(Tensor<Real>::scalar(0.0));
  out.total = ad::add(ad::add(out.pred_term, ad::scale(out.recon_term, static_cast<Real>(cfg.w1))),
                      ad::scale(out.kld_term, static_cast<Real>(cfg.w2)));
  return out;
}

/// Objective on a split along the deterministic path (z = mu), as the mean
/// over samples of each term.
inline LossTerms evaluate_objective(Predictor& p, const PredictorInputs& in,
                                    std::span<const std::size_t> idx, const TrainConfig& cfg,
                                    std::size_t batch = 64) {
  if (idx.empty()) throw Error("evaluate_objective: empty split");
  LossTerms t;
  for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
    const auto chunk = idx.subspan(b0, std::min(batch, idx.size() - b0));
    Graph<Real> g;
    const auto bg = predictor_batch(g, p, in, chunk, cfg, nullptr, nullptr, true);
    const double w = static_cast<double>(chunk.size());
    t.pred += w * bg.pred_term.value().item();
    t.recon += w * bg.recon_term.value().item();
    t.kld += w * bg.kld_term.value().item();
    t.total += w * bg.total.value().item();
  }
  const double n = static_cast<double>(idx.size());
  t.pred /= n;
  t.recon /= n;
  t.kld /= n;
  t.total /= n;
  return t;
}

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, mean batch objective
  std::vector<double> val_loss;    // per epoch, prediction term on val
  std::size_t best_epoch = 0;
  double final_loss = 0.0;         // last batch objective of the last epoch
};

/// Fits target statistics on the train split, then minimizes the joint
/// objective with Adam; the epoch with the lowest validation prediction
/// loss is kept.
inline TrainHistory train_predictor(Predictor& p, const PredictorInputs& in,
                                    std::span<const std::size_t> train,
                                    std::span<const std::size_t> val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw Error("train_predictor: empty training split");
  if (in.targets.size() != in.size()) throw Error("train_predictor: targets missing");
  p.stats_hash = in.stats_hash;
  // Target standardization from the train split (population std).
  for (std::size_t k = 0; k < 4; ++k) {
    double m = 0.0, s = 0.0;
    for (std::size_t i : train) m += in.targets[i].as_array()[k];
    m /= static_cast<double>(train.size());
    for (std::size_t i : train) s += std::pow(in.targets[i].as_array()[k] - m, 2);
    s = std::sqrt(s / static_cast<double>(train.size()));
    p.target_mean[k] = m;
    // Degenerate targets predict the train mean for every input.
    p.target_std[k] = s <= 1e-12 * std::max(1.0, std::abs(m)) ? 0.0 : s;
  }
  if (p.arch().variant == Variant::SequentialThermal) {
    if (!in.voxels) throw Error("train_predictor: SequentialThermal needs voxel inputs");
    auto& center = p.params()["norm.center"].value;
    const std::size_t w = center.size();
    if (in.voxels->voxel_size() != w) throw Error("train_predictor: voxel size does not match the sequential input width");
    std::vector<double> m(w, 0.0);
    for (std::size_t i : train)
      for (std::size_t k = 0; k < w; ++k) m[k] += in.voxels->normalize(in.voxels->values[i][k]);
    for (std::size_t k = 0; k < w; ++k) center[k] = static_cast<Real>(m[k] / static_cast<double>(train.size()));
    double ss = 0.0;
    for (std::size_t i : train)
      for (std::size_t k = 0; k < w; ++k) ss += std::pow(in.voxels->normalize(in.voxels->values[i][k]) - center[k], 2);
    const double spread = std::sqrt(ss / static_cast<double>(train.size() * w));
    p.params()["norm.spread"].value[0] = static_cast<Real>(spread > 1e-6 ? spread : 1.0);
  }
  const bool finetune = p.encoder() && cfg.encoder_mode == EncoderMode::finetune;
  std::optional<detail::FrozenCache> cache;
  if (p.encoder()) {
    p.encoder()->params().set_frozen(!finetune);
    if (!finetune) {
      if (!in.voxels) throw Error("train_predictor: encoder variants need voxel inputs");
      cache = detail::frozen_cache(*p.encoder(), *in.voxels);
    }
  }
  const ad::AdamConfig ac{cfg.lr, 0.9, 0.999, 1e-8};
  ad::AdamState<Real> adam(p.params(), ac);
  std::optional<ad::AdamState<Real>> enc_adam;
  if (finetune) enc_adam.emplace(p.encoder()->params(), ac);
  const bool vae = p.encoder() && p.encoder()->arch().kind == ReconKind::VAE3D;

  std::vector<std::size_t> order(train.begin(), train.end());
  TrainHistory h;
  double best = std::numeric_limits<double>::infinity();
  ParamSet<Real> best_head = p.params().clone();
  std::optional<ParamSet<Real>> best_enc;
  if (finetune) best_enc = p.encoder()->params().clone();
  for (std::size_t epoch = 0; epoch < cfg.predictor_epochs; ++epoch) {
    Rng shuffle(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch, ++batches) {
      const std::span<const std::size_t> chunk(order.data() + b0,
                                               std::min(cfg.batch, order.size() - b0));
      p.params().zero_grad();
      if (finetune) p.encoder()->params().zero_grad();
      std::optional<Tensor<Real>> eps;
      if (finetune && vae) {
        Rng er(cfg.seed, "reparameterize-finetune", epoch, batches);
        eps = ad::standard_normal<Real>({chunk.size(), p.arch().thermal_width}, er);
      }
      Graph<Real> g;
      const auto bg = predictor_batch(g, p, in, chunk, cfg, cache ? &*cache : nullptr,
                                      eps ? &*eps : nullptr, true);
      const double lv = bg.total.value().item();
      if (!std::isfinite(lv)) {
        throw Error("train_predictor: non-finite loss at epoch " + std::to_string(epoch) +
                    " batch " + std::to_string(batches));
      }
      g.backward(bg.total);
      ad::adam_step(p.params(), adam);
      if (finetune) ad::adam_step(p.encoder()->params(), *enc_adam);
      total += lv;
      h.final_loss = lv;
    }
    h.train_loss.push_back(total / static_cast<double>(batches));
    if (!val.empty()) {
      double vl = 0.0;
      if (cache) {
        Graph<Real> g;
        vl = predictor_batch(g, p, in, val, cfg, &*cache, nullptr, true).pred_term.value().item();
      } else {
        vl = evaluate_objective(p, in, val, cfg).pred;
      }
      h.val_loss.push_back(vl);
      if (vl < best) {
        best = vl;
        h.best_epoch = epoch;
        best_head = p.params().clone();
        if (finetune) best_enc = p.encoder()->params().clone();
      }
    }
  }
  if (!val.empty() && cfg.predictor_epochs > 0) {
    for (std::size_t i = 0; i < best_head.size(); ++i) p.params().at(i).value = best_head.at(i).value;
    if (best_enc)
      for (std::size_t i = 0; i < best_enc->size(); ++i)
        p.encoder()->params().at(i).value = best_enc->at(i).value;
  }
  if (p.encoder()) p.encoder()->params().set_frozen(false);
  return h;
}

/// Denormalized predictions for the listed parts along the deterministic path.
inline std::vector<QualityVector> predict(Predictor& p, const PredictorInputs& in,
                                          std::span<const std::size_t> idx, std::size_t batch = 64) {
  if (in.stats_hash != p.stats_hash) {
    throw Error("predict: inputs were standardized with statistics '" + in.stats_hash +
                "' but the model expects '" + p.stats_hash + "'");
  }
  std::vector<QualityVector> out;
  out.reserve(idx.size());
  TrainConfig cfg;
  for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch) {
    const auto chunk = idx.subspan(b0, std::min(batch, idx.size() - b0));
    Graph<Real> g;
    const auto bg = predictor_batch(g, p, in, chunk, cfg, nullptr, nullptr, false);
    const auto& z = bg.pred.value().storage();
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(p.denormalize(&z[i * 4]));
  }
  return out;
}

}  // namespace thermonet::models
