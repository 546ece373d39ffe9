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
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "thermonet/synthbed.hpp"

namespace thermonet::synth {
namespace {

JobConfig quiet_job() {
  JobConfig cfg;
  cfg.noise_amplitude = 0.0;
  cfg.k1 = cfg.k2 = 0.0;
  cfg.seed = 5;
  return cfg;
}

BedLayout single_part(std::size_t x = 60, std::size_t y = 50, std::size_t z = 10,
                      Orientation o = Orientation::horizontal) {
  BedLayout l;
  l.parts.push_back(PartPlacement{1, x, y, z, o});
  return l;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Layout, VerticalIsAxisSwap) {
  PartPlacement h{0, 0, 0, 0, Orientation::horizontal};
  PartPlacement v{0, 0, 0, 0, Orientation::vertical};
  EXPECT_EQ(h.extent_x(), 35u);
  EXPECT_EQ(h.extent_y(), 18u);
  EXPECT_EQ(v.extent_x(), h.extent_y());
  EXPECT_EQ(v.extent_y(), h.extent_x());
  EXPECT_EQ(v.extent_z(), 7u);
}

TEST(Layout, RejectsOverlapAndOutOfBed) {
  BedLayout l = single_part();
  l.parts.push_back(PartPlacement{2, 70, 55, 12, Orientation::vertical});
  EXPECT_THROW(l.validate(), Error);
  l.parts.back().z = 17;  // stacked above, no shared layer
  EXPECT_NO_THROW(l.validate());
  l.parts.push_back(PartPlacement{3, 150, 0, 0, Orientation::horizontal});
  EXPECT_THROW(l.validate(), Error);
  EXPECT_THROW(generate_build(l, quiet_job()), Error);
}

TEST(Layout, RoundTripsThroughText) {
  CampaignConfig cc;
  const BedLayout l = random_layout(cc, 3);
  const BedLayout back = parse_layout(format_layout(l));
  ASSERT_EQ(back.parts.size(), l.parts.size());
  for (std::size_t i = 0; i < l.parts.size(); ++i) {
    EXPECT_EQ(back.parts[i].x, l.parts[i].x);
    EXPECT_EQ(back.parts[i].z, l.parts[i].z);
    EXPECT_EQ(back.parts[i].orientation, l.parts[i].orientation);
  }
  EXPECT_EQ(format_layout(back), format_layout(l));
}

TEST(Layout, UnknownKeyListsAcceptedKeys) {
  try {
    parse_layout("bed_w = 160\nbed_depth = 3\n");
    FAIL();
  } catch (const Error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("bed_depth"), std::string::npos);
    EXPECT_NE(m.find("bed_w, bed_h, layers, part"), std::string::npos);
  }
  EXPECT_THROW(parse_layout("part = 1 2 3 4 diagonal\n"), Error);
  EXPECT_THROW(parse_layout("layers = many\n"), Error);
}

TEST(ThermalField, EmptyBedIsUniformBase) {
  BedLayout l;
  JobConfig cfg = quiet_job();
  cfg.field.edge_cooling = 0.0;
  const ThermalFrame f = thermal_field(l, cfg, 0);
  for (double t : f.temps) EXPECT_EQ(t, cfg.field.base_temp);
}

TEST(ThermalField, PartCentreMatchesClosedForm) {
  JobConfig cfg = quiet_job();
  cfg.field.edge_cooling = 0.0;
  cfg.field.packing_amplitude = 0.0;
  cfg.printer_id = 3;
  cfg.binder_level = 0.7;
  const BedLayout l = single_part(60, 50, 10);
  const ThermalFrame f = thermal_field(l, cfg, 12);
  // Disc of radius 6 around the centre lies inside the 35x18 footprint.
  const double expected = 130.0 + 8.0 + 40.0 * 0.7 + 15.0 * 1.0;
  EXPECT_NEAR(f.at(60 + 17, 50 + 9), expected, 1e-12);
  // Outside the part's layer range the pixel is back to base.
  EXPECT_NEAR(thermal_field(l, cfg, 3).at(77, 59), 138.0, 1e-12);
}

TEST(ThermalField, SameSeedIsBitIdentical) {
  CampaignConfig cc;
  const BedLayout l = random_layout(cc, 1);
  const JobConfig cfg = job_for_build(cc, 1);
  EXPECT_EQ(thermal_field(l, cfg, 14).temps, thermal_field(l, cfg, 14).temps);
  JobConfig other = cfg;
  other.seed += 1;
  EXPECT_NE(thermal_field(l, cfg, 14).temps, thermal_field(l, other, 14).temps);
}

TEST(Distort, ZeroCoefficientsAreIdentity) {
  Rng rng(1);
  ThermalFrame f(40, 30);
  for (double& t : f.temps) t = rng.uniform(80, 220);
  const ThermalFrame g = distort(f, 0.0, 0.0);
  for (std::size_t i = 0; i < f.temps.size(); ++i) EXPECT_NEAR(g.temps[i], f.temps[i], 1e-6);
}

TEST(Distort, ConstantFrameStaysConstant) {
  ThermalFrame f(41, 31, 150.0);
  for (double k1 : {-0.1, 0.05, 0.3}) {
    const ThermalFrame g = distort(f, k1, 0.02);
    for (double t : g.temps) EXPECT_NEAR(t, 150.0, 1e-9);
  }
}

TEST(Distort, CentreImpulseStaysAtCentre) {
  ThermalFrame f(41, 31, 100.0);
  f.at(20, 15) = 200.0;
  const ThermalFrame g = distort(f, 0.2, 0.05);
  EXPECT_DOUBLE_EQ(g.at(20, 15), 200.0);
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < g.temps.size(); ++i)
    if (g.temps[i] > g.temps[argmax]) argmax = i;
  EXPECT_EQ(argmax, 15u * 41 + 20);
}

TEST(Oracle, DecoupledWhenSlopeIsZero) {
  JobConfig cfg = quiet_job();
  cfg.oracle.density_slope = 0.0;
  cfg.oracle.density_noise = 0.0;
  PartPlacement p;
  for (double tmin : {100.0, 150.0, 190.0}) {
    p.id = static_cast<int>(tmin);
    EXPECT_EQ(quality_oracle(p, {tmin, tmin + 5, tmin + 10}, cfg).density, 4.2);
  }
}

TEST(Oracle, EqualInputsGiveEqualQuality) {
  JobConfig cfg = quiet_job();
  cfg.oracle.density_noise = 0.0;
  cfg.oracle.dim_noise_rel = 0.0;
  PartPlacement a, b;
  a.id = 1;
  b.id = 2;
  const Aggregates agg{150, 170, 190};
  EXPECT_EQ(quality_oracle(a, agg, cfg), quality_oracle(b, agg, cfg));
}

TEST(Oracle, MinTemperatureSweepIsPerfectlyCorrelated) {
  JobConfig cfg = quiet_job();
  cfg.oracle.density_noise = 0.0;
  std::vector<double> tmin, dens;
  for (int i = 0; i < 20; ++i) {
    PartPlacement p;
    p.id = i;
    tmin.push_back(120.0 + 3.0 * i);
    dens.push_back(quality_oracle(p, {tmin.back(), 170, 200}, cfg).density);
  }
  EXPECT_NEAR(pearson(tmin, dens), 1.0, 1e-12);
}

TEST(Oracle, DimensionsMatchClosedForm) {
  JobConfig cfg = quiet_job();
  cfg.oracle.dim_noise_rel = 0.0;
  cfg.binder_level = 0.7;
  PartPlacement p;
  const QualityVector q = quality_oracle(p, {150, 175, 200}, cfg);
  const double shrink = 0.01 + 0.0008 * (175 - 165) + 0.02 * (0.7 - 0.6);
  EXPECT_NEAR(q.length, 35 * (1 - shrink), 1e-12);
  EXPECT_NEAR(q.width, 18 * (1 - 0.8 * shrink), 1e-12);
  EXPECT_NEAR(q.height, 7 * (1 - 2 * shrink), 1e-12);
}

TEST(Build, SevenLayersContainThePart) {
  JobConfig cfg = quiet_job();
  const BedLayout l = single_part(60, 50, 20);
  const BuildData b = generate_build(l, cfg);
  const double base = 130.0;
  std::size_t hot = 0;
  for (std::size_t layer = 0; layer < l.layers; ++layer) {
    if (b.frame(layer, cfg.frames_per_layer - 1).at(77, 59) > base + 20) ++hot;
  }
  EXPECT_EQ(hot, 7u);
  EXPECT_EQ(b.frames.size(), 64u * cfg.frames_per_layer);
  ASSERT_EQ(b.truths.size(), 1u);
  EXPECT_GT(b.truths[0].quality.density, 0.0);
}

TEST(Build, FramesPerLayerAreDistinctFusingStates) {
  CampaignConfig cc;
  const BuildData b = generate_build(random_layout(cc, 0), job_for_build(cc, 0));
  const auto& layer = b.layout.parts[0].z;
  EXPECT_NE(b.frame(layer, 0).temps, b.frame(layer, 1).temps);
  const double m0 = std::accumulate(b.frame(layer, 0).temps.begin(), b.frame(layer, 0).temps.end(), 0.0);
  const double m1 = std::accumulate(b.frame(layer, 1).temps.begin(), b.frame(layer, 1).temps.end(), 0.0);
  EXPECT_LT(m0, m1);
  JobConfig one = job_for_build(cc, 0);
  one.frames_per_layer = 1;
  EXPECT_THROW(generate_build(b.layout, one), Error);
}

TEST(Build, EveryFrameWithinPhysicalRange) {
  CampaignConfig cc;
  cc.noise_amplitude = 5.0;
  for (std::size_t build : {0u, 4u}) {
    const BuildData b = generate_build(random_layout(cc, build), job_for_build(cc, build));
    for (const auto& f : b.frames)
      for (double t : f.temps) {
        ASSERT_GE(t, 80.0);
        ASSERT_LE(t, 220.0);
      }
  }
}

TEST(Build, PureFunctionOfInputs) {
  CampaignConfig cc;
  const BedLayout l = random_layout(cc, 2);
  const JobConfig cfg = job_for_build(cc, 2);
  const BuildData a = generate_build(l, cfg);
  const BuildData b = generate_build(l, cfg);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) ASSERT_EQ(a.frames[i].temps, b.frames[i].temps);
  ASSERT_EQ(a.telemetry.size(), b.telemetry.size());
  for (std::size_t i = 0; i < a.telemetry.size(); ++i)
    EXPECT_EQ(a.telemetry[i].fields, b.telemetry[i].fields);
  for (std::size_t i = 0; i < a.truths.size(); ++i) EXPECT_EQ(a.truths[i].quality, b.truths[i].quality);
}

TEST(Build, FullBuildIsFast) {
  CampaignConfig cc;
  const auto t0 = std::chrono::steady_clock::now();
  generate_build(random_layout(cc, 0), job_for_build(cc, 0));
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(s, 5.0);
}

TEST(Campaign, DefaultCampaignReachesPartCount) {
  CampaignConfig cc;
  std::size_t parts = 0;
  std::set<int> printers;
  for (std::size_t b = 0; b < cc.builds; ++b) {
    const BedLayout l = random_layout(cc, b);
    EXPECT_NO_THROW(l.validate());
    parts += l.parts.size();
    printers.insert(job_for_build(cc, b).printer_id);
  }
  EXPECT_EQ(cc.builds, 29u);
  EXPECT_GE(parts, 761u);
  EXPECT_EQ(printers.size(), 5u);
}

TEST(Telemetry, SchemaHasDistractors) {
  CampaignConfig cc;
  const BedLayout l = random_layout(cc, 0);
  const auto recs = emit_telemetry(l, job_for_build(cc, 0));
  ASSERT_EQ(recs.size(), l.parts.size());
  const auto& schema = telemetry_schema();
  EXPECT_GE(schema.size(), 25u);
  EXPECT_LE(schema.size(), 30u);
  for (const auto& r : recs) {
    ASSERT_EQ(r.fields.size(), schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) EXPECT_EQ(r.fields[i].first, schema[i]);
  }
  for (const auto& d : distractor_fields()) EXPECT_NE(recs[0].find(d), nullptr);
}

TEST(Property, CorrelationDegradesWithOracleNoise) {
  CampaignConfig cc;
  cc.noise_amplitude = 0.0;
  std::vector<double> tmin;
  std::vector<PartPlacement> parts;
  std::vector<JobConfig> jobs;
  for (std::size_t b = 0; b < 4; ++b) {
    const BedLayout l = random_layout(cc, b);
    const JobConfig cfg = job_for_build(cc, b);
    const FieldModel model(l, cfg);
    for (const auto& p : l.parts) {
      tmin.push_back(aggregate_values(clean_part_values(model, p)).min);
      parts.push_back(p);
      jobs.push_back(cfg);
    }
  }
  double prev = 2.0;
  for (double noise : {0.0, 0.02, 0.05, 0.1, 0.3}) {
    std::vector<double> dens;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      JobConfig cfg = jobs[i];
      cfg.oracle.density_noise = noise;
      dens.push_back(quality_oracle(parts[i], {tmin[i], 0, 0}, cfg).density);
    }
    const double r = pearson(tmin, dens);
    if (noise == 0.0) {
      EXPECT_GE(std::abs(r), 0.99);
    }
    EXPECT_LT(r, prev) << "noise " << noise;
    prev = r;
  }
}

}  // namespace
}  // namespace thermonet::synth
