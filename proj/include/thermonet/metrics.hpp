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

// Evaluation metrics shared by training and reporting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "thermonet/common.hpp"

namespace thermonet::metrics {

/// Average pixel difference: mean |a - b| over all voxels.
inline double adp(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("adp: grids differ in size (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw Error("adp: empty grids");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

/// 100 * |pred - truth| / truth.
inline double pct_error(double pred, double truth) {
  if (!(truth > 0.0)) throw Error("pct_error: truth must be positive, got " + std::to_string(truth));
  return 100.0 * std::abs(pred - truth) / truth;
}

struct ErrorStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline ErrorStats error_stats(std::span<const double> xs) {
  if (xs.size() < 2) {
    throw Error("error_stats: need at least 2 values, got " + std::to_string(xs.size()));
  }
  const double n = static_cast<double>(xs.size());
  // Summation in sorted order makes the result independent of input order.
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: series lengths differ");
  if (x.size() < 3) throw Error("pearson: need at least 3 pairs, got " + std::to_string(x.size()));
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw Error(std::string("pearson: zero variance in ") + (sxx <= 0.0 ? "x" : "y") +
                ", correlation is undefined");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace thermonet::metrics
