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

// Small synthetic campaigns shared by the pipeline, model and acceptance tests.

#include <filesystem>
#include <string>
#include <vector>

#include "thermonet/preprocess.hpp"

namespace thermonet::testing {

inline std::vector<prep::PartSample> campaign_samples(const synth::CampaignConfig& cc,
                                                      const prep::PipelineConfig& pc = {}) {
  std::vector<prep::PartSample> out;
  for (std::size_t b = 0; b < cc.builds; ++b) {
    const auto build = synth::generate_build(synth::random_layout(cc, b), synth::job_for_build(cc, b));
    auto part = prep::process_build(build, pc);
    for (auto& s : part) out.push_back(std::move(s));
  }
  return out;
}

inline prep::Dataset small_dataset(std::size_t builds, std::size_t parts, std::uint64_t seed,
                                   prep::SplitRatios ratios = {0.8, 0.1, 0.1},
                                   std::size_t geometry_roi = 0) {
  synth::CampaignConfig cc;
  cc.builds = builds;
  cc.parts_per_build = parts;
  cc.seed = seed;
  prep::PipelineConfig pc;
  pc.geometry_roi = geometry_roi;
  return prep::assemble_dataset(campaign_samples(cc, pc), ratios, seed);
}

/// Fresh per-test scratch directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("thermonet-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace thermonet::testing
