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

#include <cmath>
#include <cstdint>
#include <vector>

#include "thermonet/autodiff/graph.hpp"

namespace thermonet::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter (same order as the ParamSet) and the
/// shared step counter.
template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  explicit AdamState(const ParamSet<T>& params, AdamConfig cfg = {}) : config(cfg) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.emplace_back(params.at(i).value.shape());
      v.emplace_back(params.at(i).value.shape());
    }
  }
};

/// One bias-corrected Adam update over every unfrozen parameter. Gradients
/// are validated before anything is modified, so a rejected step leaves
/// parameters and state untouched.
template <class T>
void adam_step(ParamSet<T>& params, AdamState<T>& state) {
  if (state.m.size() != params.size()) {
    throw Error("adam: state tracks " + std::to_string(state.m.size()) + " parameters, set has " +
                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = params.at(i);
    if (p.grad.shape() != p.value.shape() || state.m[i].shape() != p.value.shape()) {
      throw Error("adam: shape mismatch for parameter '" + p.name + "'");
    }
    if (p.frozen) continue;
    for (T g : p.grad.storage()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw Error("adam: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  state.t += 1;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params.at(i);
    if (p.frozen) continue;
    auto& w = p.value.storage();
    const auto& g = p.grad.storage();
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = static_cast<T>(c.beta1 * m[k] + (1.0 - c.beta1) * g[k]);
      v[k] = static_cast<T>(c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k]);
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] = static_cast<T>(w[k] - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-a, a));
  return t;
}

/// Tensor of independent standard normal draws.
template <class T>
Tensor<T> standard_normal(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal());
  return t;
}

}  // namespace thermonet::ad
