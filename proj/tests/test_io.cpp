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

#include <cstring>

#include "support/fixtures.hpp"
#include "thermonet/io.hpp"

namespace thermonet::io {
namespace {

std::uint32_t u32_at(const std::string& s, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + 3])) << 24;
}

prep::ThermalVoxel labeled_voxel() {
  prep::ThermalVoxel v;
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = 80.0 + 0.25 * static_cast<double>(i % 560);
  return v;
}

TEST(Sha256, StandardVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Exact, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 4.35e-7, -123456.789, 2.0})
    EXPECT_EQ(std::strtod(exact(v).c_str(), nullptr), v);
  EXPECT_EQ(exact(0.1), "0.1");
}

TEST(Thvx, HeaderLayoutIsLittleEndian) {
  const std::string bytes = encode_blob(thermal_blob(labeled_voxel()));
  ASSERT_EQ(bytes.substr(0, 4), "THVX");
  EXPECT_EQ(u32_at(bytes, 4), 1u);
  EXPECT_EQ(u32_at(bytes, 8), 1u);
  EXPECT_EQ(u32_at(bytes, 12), 18u);
  EXPECT_EQ(u32_at(bytes, 16), 35u);
  EXPECT_EQ(u32_at(bytes, 20), 7u);
  EXPECT_EQ(bytes.size(), 24u + 18 * 35 * 7 * 4);
  // Voxel (w=1, l=2, h=3) sits at row-major offset (1 * 35 + 2) * 7 + 3.
  float f;
  std::memcpy(&f, bytes.data() + 24 + 4 * ((1 * 35 + 2) * 7 + 3), 4);
  EXPECT_EQ(f, static_cast<float>(labeled_voxel().at(1, 2, 3)));
}

TEST(Thvx, RoundTrips) {
  const auto v = labeled_voxel();
  EXPECT_EQ(thermal_values(decode_blob(encode_blob(thermal_blob(v))), "t"), v.values);
  prep::GeometryVoxel g;
  g.edge = 4;
  for (std::size_t i = 0; i < 64; ++i) g.values.push_back(i % 3 ? 0 : 255);
  const std::string gb = encode_blob(geometry_blob(g));
  EXPECT_EQ(u32_at(gb, 8), 2u);
  EXPECT_EQ(gb.size(), 24u + 64);
  EXPECT_EQ(decode_blob(gb).u8, g.values);
}

TEST(Thvx, RejectsMalformedBlobs) {
  const std::string good = encode_blob(thermal_blob(labeled_voxel()));
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_blob(bad), Error);
  EXPECT_THROW(decode_blob(good.substr(0, good.size() - 1)), Error);
  bad = good;
  bad[8] = 3;
  EXPECT_THROW(decode_blob(bad), Error);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(decode_blob(bad), Error);
  VoxelBlob b;
  b.w = b.l = b.h = 2;
  b.f32.assign(7, 0.0f);
  EXPECT_THROW(encode_blob(b), Error);
}

TEST(Thvx, FramesRoundTripAtSinglePrecision) {
  std::vector<synth::ThermalFrame> frames;
  for (std::size_t f = 0; f < 4; ++f) {
    synth::ThermalFrame fr(5, 3);
    for (std::size_t i = 0; i < fr.temps.size(); ++i) fr.temps[i] = 100.0 + 10.0 * f + 0.1 * i;
    frames.push_back(fr);
  }
  const auto back = frames_from_blob(decode_blob(encode_blob(frames_blob(frames))), 2);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[3].layer, 1u);
  EXPECT_EQ(back[3].frame, 1u);
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t i = 0; i < 15; ++i)
      EXPECT_EQ(back[f].temps[i], static_cast<double>(static_cast<float>(frames[f].temps[i])));
  EXPECT_THROW(frames_from_blob(decode_blob(encode_blob(frames_blob(frames))), 3), Error);
}

TEST(KeyValues, ParsesCommentsAndRejectsUnknownKeys) {
  const auto kv = KeyValues::parse("# experiment\nseed = 7\n  latent=9   # inline\n\nname = a b\n");
  EXPECT_EQ(kv.get("seed"), "7");
  EXPECT_EQ(kv.get("latent"), "9");
  EXPECT_EQ(kv.get("name"), "a b");
  EXPECT_FALSE(kv.get("lr"));
  try {
    kv.require_known({"seed", "latent"});
    FAIL();
  } catch (const Error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("'name'"), std::string::npos);
    EXPECT_NE(m.find("accepted: seed, latent"), std::string::npos);
  }
  EXPECT_THROW(KeyValues::parse("seed 7"), Error);
  EXPECT_THROW(KeyValues::parse("seed = 1\nseed = 2"), Error);
  EXPECT_THROW(KeyValues::parse(" = 2"), Error);
  EXPECT_EQ(KeyValues::parse(kv.str()).values(), kv.values());
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
  const auto dir = testing::scratch_dir("atomic");
  write_file_atomic(dir / "a" / "b.txt", "hello");
  EXPECT_EQ(read_file(dir / "a" / "b.txt"), "hello");
  EXPECT_FALSE(fs::exists(dir / "a" / "b.txt.tmp"));
  EXPECT_THROW(read_file(dir / "missing"), Error);
}

TEST(Manifest, DetectsAnySingleByteCorruption) {
  const auto dir = testing::scratch_dir("corrupt") / "set";
  const std::string blob = encode_blob(thermal_blob(labeled_voxel()));
  publish_directory(dir, {{"voxels/a.thvx", blob}, {"notes.txt", "abc"}}, json{{"k", 1}});
  const json m = load_manifest(dir);
  EXPECT_EQ(m.at("k"), 1);
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    std::string bad = blob;
    const std::size_t at = rng.index(bad.size());
    bad[at] = static_cast<char>(bad[at] ^ (1 + rng.index(255)));
    write_file_atomic(dir / "voxels/a.thvx", bad);
    EXPECT_THROW(verify_files(dir, m), Error) << "byte " << at;
  }
  fs::remove(dir / "voxels/a.thvx");
  try {
    verify_files(dir, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("a.thvx"), std::string::npos);
  }
  EXPECT_THROW(load_manifest(dir.parent_path() / "nowhere"), Error);
}

TEST(Manifest, PublishReplacesStaleContent) {
  const auto dir = testing::scratch_dir("publish") / "out";
  publish_directory(dir, {{"old.txt", "1"}}, json::object());
  publish_directory(dir, {{"new.txt", "2"}}, json::object());
  EXPECT_FALSE(fs::exists(dir / "old.txt"));
  EXPECT_TRUE(fs::exists(dir / "new.txt"));
  EXPECT_FALSE(fs::exists(dir.string() + ".staging"));
}

TEST(Builds, DiskRoundTrip) {
  synth::CampaignConfig cc;
  cc.parts_per_build = 6;
  cc.layers = 24;
  cc.seed = 11;
  const auto build = synth::generate_build(synth::random_layout(cc, 1), synth::job_for_build(cc, 1));
  const auto dir = testing::scratch_dir("build");
  for (const auto& [name, bytes] : encode_build(build)) write_file_atomic(dir / name, bytes);
  const auto back = load_build(dir);
  EXPECT_EQ(synth::format_layout(back.layout), synth::format_layout(build.layout));
  EXPECT_EQ(format_job(back.config), format_job(build.config));
  ASSERT_EQ(back.telemetry.size(), build.telemetry.size());
  for (std::size_t i = 0; i < build.telemetry.size(); ++i)
    EXPECT_EQ(back.telemetry[i].fields, build.telemetry[i].fields);
  for (std::size_t i = 0; i < build.truths.size(); ++i) {
    EXPECT_EQ(back.truths[i].quality, build.truths[i].quality);
    EXPECT_EQ(back.truths[i].clean_aggregates.min, build.truths[i].clean_aggregates.min);
  }
  // Frames are stored at single precision, so processed voxels agree to
  // float resolution.
  const auto a = prep::process_build(build);
  const auto b = prep::process_build(back);
  for (std::size_t p = 0; p < a.size(); ++p) {
    EXPECT_EQ(a[p].record.raw_features, b[p].record.raw_features);
    for (std::size_t i = 0; i < a[p].voxel.values.size(); ++i)
      ASSERT_NEAR(a[p].voxel.values[i], b[p].voxel.values[i], 1e-4);
  }
  EXPECT_THROW(parse_job("build_id = 1\ncolour = red\n"), Error);
  EXPECT_THROW(parse_telemetry("a,b\n1\n"), Error);
}

TEST(Datasets, DiskRoundTripVerifiesBlobs) {
  const prep::Dataset d = testing::small_dataset(4, 5, 13, {0.8, 0.1, 0.1}, 8);
  const auto dir = testing::scratch_dir("dataset") / "ds";
  save_dataset(dir, d, json{{"note", "x"}});
  const prep::Dataset back = load_dataset(dir);
  ASSERT_EQ(back.records.size(), d.records.size());
  EXPECT_EQ(back.splits.train, d.splits.train);
  EXPECT_EQ(back.splits.val, d.splits.val);
  auto test_sorted = d.splits.test;
  std::sort(test_sorted.begin(), test_sorted.end());
  EXPECT_EQ(back.splits.test, test_sorted);
  EXPECT_EQ(stats_hash(back.stats), stats_hash(d.stats));
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    EXPECT_EQ(back.records[i].key, d.records[i].key);
    EXPECT_EQ(back.records[i].features, d.records[i].features);
    EXPECT_EQ(back.records[i].target, d.records[i].target);
    EXPECT_EQ(back.geometry[i].values, d.geometry[i].values);
    for (std::size_t v = 0; v < d.voxels[i].values.size(); ++v)
      ASSERT_EQ(back.voxels[i].values[v], static_cast<double>(static_cast<float>(d.voxels[i].values[v])));
  }
  const std::string rel = "voxels/" + d.records[2].key.str() + ".thvx";
  std::string bytes = read_file(dir / rel);
  bytes[100] = static_cast<char>(bytes[100] ^ 1);
  write_file_atomic(dir / rel, bytes);
  EXPECT_THROW(load_dataset(dir), Error);
}

models::TrainConfig tiny() {
  models::TrainConfig c;
  c.hidden = 8;
  c.seed = 4;
  c.channels = {2, 3};
  return c;
}

TEST(Checkpoints, PredictorRoundTripIsBitExact) {
  const prep::Dataset d = testing::small_dataset(3, 4, 17);
  auto vs = std::make_shared<const models::VoxelSet>(models::VoxelSet::thermal(d));
  const auto in = models::make_inputs(d, vs, "h");
  for (auto variant : {models::Variant::NoThermal, models::Variant::SequentialThermal,
                       models::Variant::LatentThermal}) {
    std::optional<models::ReconModel> enc;
    if (models::uses_encoder(variant))
      enc = models::build_recon_model(models::ReconKind::VAE3D, 5, 2, {2, 3});
    models::Predictor p = models::build_predictor(variant, in.tabular[0].size(), std::move(enc), tiny());
    p.stats_hash = "h";
    p.target_mean = {35.1, 18.2, 7.3, 4.4};
    p.target_std = {0.1, 0.2, 0.3, 0.0};
    const std::string bytes = encode_predictor(p, json{{"epochs", 3}});
    models::Predictor q = decode_predictor(bytes);
    EXPECT_EQ(encode_predictor(q, json{{"epochs", 3}}), bytes);
    EXPECT_EQ(checkpoint_extra(bytes).at("epochs"), 3);
    const auto idx = models::detail::iota(in.size());
    const auto a = models::predict(p, in, idx);
    const auto b = models::predict(q, in, idx);
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_EQ(std::memcmp(&a[i], &b[i], sizeof a[i]), 0) << models::to_string(variant);
  }
}

TEST(Checkpoints, ReconRoundTripAndCorruption) {
  models::ReconModel m = models::build_recon_model(models::ReconKind::AE, 5, 9, {2, 3});
  m.params()["dec.out_bias"].value.fill(0.25);
  const std::string bytes = encode_recon(m);
  models::ReconModel back = decode_recon(bytes);
  EXPECT_EQ(back.arch().describe(), m.arch().describe());
  Rng rng(1);
  const auto x = ad::standard_normal<models::Real>({2, 1, 18, 35, 7}, rng);
  models::Graph<models::Real> g1, g2;
  EXPECT_EQ(m.forward(g1, g1.leaf(x)).recon.value(), back.forward(g2, g2.leaf(x)).recon.value());

  std::string bad = bytes;
  bad[bad.size() - 3] = static_cast<char>(bad[bad.size() - 3] ^ 4);
  EXPECT_THROW(decode_recon(bad), Error);
  EXPECT_THROW(decode_predictor(bytes), Error);
  EXPECT_THROW(decode_recon("garbage"), Error);
}

}  // namespace
}  // namespace thermonet::io
