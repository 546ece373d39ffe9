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

// Finite-difference cases covering every differentiable operation.

#include <utility>
#include <vector>

#include "support/oracles.hpp"

namespace thermonet::testing {

// Per-operation finite-difference checks, templated over precision.
template <class T>
std::vector<std::pair<const char*, std::pair<LossBuilder<T>, std::vector<Tensor<T>>>>> op_cases(
    std::uint64_t seed) {
  Rng rng(seed);
  using B = LossBuilder<T>;
  std::vector<std::pair<const char*, std::pair<B, std::vector<Tensor<T>>>>> out;
  auto t = [&](Shape s, double lo = -1, double hi = 1) { return random_tensor<T>(s, rng, lo, hi); };
  // Each loss reduces with a fixed random projection so gradients are not uniform.
  out.push_back({"dense", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                             return sum(dense(v[0], v[1], v[2]));
                           }),
                           {t({3, 4}), t({4, 2}), t({2})}}});
  out.push_back({"conv3d", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                              return mse(conv3d(v[0], v[1], v[2], {2, 1, 2}, {1, 0, 1}), v[3]);
                            }),
                            {t({1, 2, 5, 4, 4}), t({2, 2, 3, 2, 3}), t({2}), t({1, 2, 3, 3, 2})}}});
  out.push_back({"relu", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                            return mse(relu(v[0]), v[1]);
                          }),
                          {t({12}), t({12})}}});
  out.push_back({"tanh", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                            return mse(tanh(v[0]), v[1]);
                          }),
                          {t({12}, -2, 2), t({12})}}});
  out.push_back({"flatten+concat", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                                      return mse(concat(flatten(v[0], 1), v[1]), v[2]);
                                    }),
                                    {t({2, 2, 3}), t({2, 2}), t({2, 8})}}});
  out.push_back({"upsample", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                                return mse(upsample_nearest(v[0], {3, 5, 4}), v[1]);
                              }),
                              {t({1, 2, 2, 3, 2}), t({1, 2, 3, 5, 4})}}});
  out.push_back({"add_bias", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                                return mse(add_bias(v[0], v[1]), v[2]);
                              }),
                              {t({3, 2, 4}), t({2, 4}), t({3, 2, 4})}}});
  out.push_back({"mse", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                           return mse(v[0], v[1]);
                         }),
                         {t({5}), t({5})}}});
  out.push_back({"kld", {B([](Graph<T>&, const std::vector<Var<T>>& v) {
                           return kld(v[0], v[1]);
                         }),
                         {t({2, 3}), t({2, 3})}}});
  Rng eps_rng(seed ^ 0x55);
  Tensor<T> eps = standard_normal<T>({4}, eps_rng);
  out.push_back({"reparameterize", {B([eps](Graph<T>&, const std::vector<Var<T>>& v) {
                                      return mse(reparameterize(v[0], v[1], eps), v[2]);
                                    }),
                                    {t({4}), t({4}), t({4})}}});
  return out;
}

}  // namespace thermonet::testing
