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

#include <cstdlib>
#include <fstream>
#include <set>

#include "support/fixtures.hpp"
#include "thermonet/cli.hpp"

namespace {

using namespace thermonet;
using thermonet::testing::scratch_dir;
namespace fs = std::filesystem;

const char* kTiny = R"(# small but complete experiment
synth.builds = 4
synth.parts_per_build = 6
synth.layers = 16
train.recon_epochs = 2
train.predictor_epochs = 3
train.batch = 8
)";

cli::Settings tiny(const std::string& extra = "") {
  return cli::parse_settings(io::KeyValues::parse(std::string(kTiny) + extra, "tiny"));
}

void run_through_eval(const cli::Settings& s, const fs::path& out) {
  cli::cmd_synth(s, out);
  cli::cmd_preprocess(s, out);
  cli::cmd_pretrain(s, out);
  cli::cmd_train(s, out);
  cli::cmd_eval(s, out);
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  return files;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<std::vector<std::string>> data_rows(const std::string& csv) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(csv);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    rows.push_back(io::detail::csv_split(line));
  }
  return rows;
}

/// One tiny workspace shared by the read-only checks below.
const fs::path& shared_workspace() {
  static const fs::path dir = [] {
    const fs::path d = scratch_dir("cli-shared");
    run_through_eval(tiny(), d);
    return d;
  }();
  return dir;
}

TEST(Settings, InvalidKeyNamesKeyAndAcceptedValues) {
  const std::string msg = error_of([] { tiny("train.learning_rate = 0.1\n"); });
  EXPECT_NE(msg.find("'train.learning_rate'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train.lr"), std::string::npos) << msg;
  EXPECT_NE(msg.find("sweep.latents"), std::string::npos) << msg;
}

TEST(Settings, InvalidValueNamesKey) {
  const std::string msg = error_of([] { tiny("train.encoder_mode = thawed\n"); });
  EXPECT_NE(msg.find("train.encoder_mode"), std::string::npos) << msg;
  EXPECT_THROW(tiny("synth.builds = -3\n"), Error);
  EXPECT_THROW(tiny("split.test = 0.5\n"), Error);
  EXPECT_THROW(tiny("eval.variants = Bogus\n"), Error);
}

TEST(Settings, EchoRoundTrips) {
  const cli::Settings s = tiny("eval.encoder_modes = frozen,finetune\nsweep.latents = 2,4\n");
  const std::string e = cli::echo(s);
  EXPECT_EQ(cli::echo(cli::parse_settings(io::KeyValues::parse(e, "echo"))), e);
  EXPECT_EQ(std::count(e.begin(), e.end(), '\n'), static_cast<long>(cli::accepted_keys().size()));
}

TEST(Settings, DefaultsMatchProtocolScale) {
  const cli::Settings s = cli::parse_settings({});
  EXPECT_GE(s.campaign.builds, 29u);
  std::size_t parts = 0;
  std::set<int> printers;
  for (std::size_t b = 0; b < s.campaign.builds; ++b) {
    parts += synth::random_layout(s.campaign, b).parts.size();
    printers.insert(synth::job_for_build(s.campaign, b).printer_id);
  }
  EXPECT_GE(parts, 761u);
  EXPECT_EQ(printers.size(), 5u);
  EXPECT_EQ(s.sweep_latents, (std::vector<std::size_t>{5, 9, 20}));
  EXPECT_EQ(s.variants.size(), 3u);
}

TEST(Settings, OverridesTakePrecedence) {
  const fs::path dir = scratch_dir("cli-overrides");
  std::ofstream(dir / "c.cfg") << kTiny << "seed = 3\n";
  cli::Overrides o;
  o.seed = 11;
  o.variant = "LatentThermal";
  o.latent = 5;
  o.encoder_mode = "finetune";
  const cli::Settings s = cli::load_settings(dir / "c.cfg", o);
  EXPECT_EQ(s.seed, 11u);
  EXPECT_EQ(s.campaign.seed, 11u);
  EXPECT_EQ(s.train.seed, 11u);
  EXPECT_EQ(s.variants, (std::vector<models::Variant>{models::Variant::LatentThermal}));
  EXPECT_EQ(s.train.latent, 5u);
  EXPECT_EQ(s.train.encoder_mode, models::EncoderMode::finetune);
  EXPECT_EQ(s.encoder_modes, (std::vector<models::EncoderMode>{models::EncoderMode::finetune}));
}

TEST(Commands, EvalEmitsOneRowPerVariantWithTableLabels) {
  const auto rows = data_rows(io::read_file(shared_workspace() / "eval" / "summary.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][1], "Without thermal input");
  EXPECT_EQ(rows[1][1], "With thermal sequential input");
  EXPECT_EQ(rows[2][1], "With thermal latent vector");
  for (const auto& r : rows) EXPECT_EQ(r[2], std::to_string(io::load_dataset(shared_workspace() / "dataset").splits.test.size()));
}

TEST(Commands, PretrainEmitsCurvesForBothKinds) {
  const auto rows = data_rows(io::read_file(shared_workspace() / "pretrain" / "recon_adp.csv"));
  std::set<std::string> series;
  for (const auto& r : rows) series.insert(r[0]);
  EXPECT_EQ(series, (std::set<std::string>{"AE", "VAE3D"}));
  EXPECT_TRUE(fs::exists(shared_workspace() / "pretrain" / "recon_adp.svg"));
}

TEST(Commands, OutputsEchoTheConfig) {
  const io::json m = io::json::parse(io::read_file(shared_workspace() / "eval" / "manifest.json"));
  EXPECT_EQ(m.at("config").get<std::string>(), cli::echo(tiny()));
  EXPECT_EQ(io::read_file(shared_workspace() / "synth" / "campaign.cfg"), cli::echo(tiny()));
}

TEST(Commands, RerunIsIdempotent) {
  const fs::path ws = shared_workspace();
  const auto before = snapshot(ws);
  const cli::Settings s = tiny();
  cli::cmd_train(s, ws);
  cli::cmd_eval(s, ws);
  EXPECT_EQ(snapshot(ws), before);
}

TEST(Commands, FixedSeedGivesByteIdenticalTrees) {
  const fs::path a = scratch_dir("cli-det-a"), b = scratch_dir("cli-det-b");
  run_through_eval(tiny(), a);
  run_through_eval(tiny(), b);
  const auto sa = snapshot(a), sb = snapshot(b);
  EXPECT_GT(sa.size(), 20u);
  EXPECT_TRUE(sa == sb);
  const fs::path c = scratch_dir("cli-det-c");
  cli::cmd_synth(tiny("seed = 8\n"), c);
  EXPECT_NE(snapshot(c).at("synth/manifest.json"), sa.at("synth/manifest.json"));
}

TEST(Commands, MissingUpstreamNamesExpectedPath) {
  const fs::path dir = scratch_dir("cli-missing");
  const std::string msg = error_of([&] { cli::cmd_eval(tiny(), dir); });
  EXPECT_NE(msg.find((dir / "dataset" / "manifest.json").string()), std::string::npos) << msg;
  const std::string pre = error_of([&] { cli::cmd_preprocess(tiny(), dir); });
  EXPECT_NE(pre.find((dir / "synth" / "manifest.json").string()), std::string::npos) << pre;
}

TEST(Commands, HashMismatchRefusesToProceed) {
  const fs::path dir = scratch_dir("cli-corrupt");
  const cli::Settings s = tiny();
  cli::cmd_synth(s, dir);
  cli::cmd_preprocess(s, dir);
  const fs::path victim = *fs::directory_iterator(dir / "dataset" / "voxels");
  std::string bytes = io::read_file(victim);
  bytes[bytes.size() / 2] ^= 1;
  std::ofstream(victim, std::ios::binary) << bytes;
  const std::string msg = error_of([&] { cli::cmd_pretrain(s, dir); });
  EXPECT_NE(msg.find("hash mismatch"), std::string::npos) << msg;
  EXPECT_FALSE(fs::exists(dir / "pretrain"));
}

TEST(Commands, StaleUpstreamIsRefused) {
  const fs::path dir = scratch_dir("cli-stale");
  const cli::Settings s = tiny("eval.variants = NoThermal\n");
  run_through_eval(s, dir);
  const cli::Settings other = tiny("eval.variants = NoThermal\nseed = 9\n");
  cli::cmd_synth(other, dir);
  cli::cmd_preprocess(other, dir);
  const std::string msg = error_of([&] { cli::cmd_eval(other, dir); });
  EXPECT_NE(msg.find("rerun"), std::string::npos) << msg;
}

TEST(Commands, SweepTrainsEachLatentSize) {
  const fs::path dir = scratch_dir("cli-sweep");
  const cli::Settings s = tiny("sweep.latents = 5,9,20\n");
  cli::cmd_synth(s, dir);
  cli::cmd_preprocess(s, dir);
  cli::cmd_sweep(s, dir);
  const auto rows = data_rows(io::read_file(dir / "sweep" / "sweep.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "5");
  EXPECT_EQ(rows[1][0], "9");
  EXPECT_EQ(rows[2][0], "20");
  EXPECT_TRUE(fs::exists(dir / "sweep" / "latent_20.ckpt"));
}

TEST(Commands, GeometryVariantRunsEndToEnd) {
  const fs::path dir = scratch_dir("cli-geometry");
  const cli::Settings s =
      tiny("preprocess.geometry_roi = 8\neval.variants = NoThermal,GeometryLatent\npretrain.kinds = VAE3D\n");
  run_through_eval(s, dir);
  EXPECT_TRUE(fs::exists(dir / "pretrain" / "geometry_VAE3D.ckpt"));
  const auto rows = data_rows(io::read_file(dir / "eval" / "summary.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][1], "With geometry latent vector");
}

TEST(Commands, PlotEmitsDistributions) {
  const fs::path ws = shared_workspace();
  cli::cmd_plot(tiny(), ws);
  for (const char* f : {"correlation.csv", "min_temp_by_split.csv", "min_temp_by_printer.csv",
                        "min_temp_by_build.csv", "min_temp_by_orientation.csv"})
    EXPECT_TRUE(fs::exists(ws / "plots" / f)) << f;
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(THERMONET_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST(Binary, MalformedConfigExitsNonzeroWithoutOutput) {
  const fs::path dir = scratch_dir("cli-binary");
  std::ofstream(dir / "bad.cfg") << "synth.builds = 4\nno equals sign here\n";
  EXPECT_NE(run_cli("synth --config " + (dir / "bad.cfg").string() + " --out " + (dir / "ws").string()), 0);
  EXPECT_FALSE(fs::exists(dir / "ws"));
  std::ofstream(dir / "unknown.cfg") << "synth.bulids = 4\n";
  EXPECT_NE(run_cli("synth --config " + (dir / "unknown.cfg").string() + " --out " + (dir / "ws").string()), 0);
  EXPECT_FALSE(fs::exists(dir / "ws"));
}

TEST(Binary, SucceedsOnlyAfterPublishing) {
  const fs::path dir = scratch_dir("cli-binary-ok");
  std::ofstream(dir / "ok.cfg") << kTiny;
  EXPECT_EQ(run_cli("synth --config " + (dir / "ok.cfg").string() + " --out " + (dir / "ws").string()), 0);
  EXPECT_NO_THROW(io::load_manifest(dir / "ws" / "synth"));
  EXPECT_NE(run_cli("train --config " + (dir / "ok.cfg").string() + " --out " + (dir / "ws").string()), 0);
}

}  // namespace
