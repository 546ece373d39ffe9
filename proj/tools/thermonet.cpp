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

// Command-line entry point for the experiment pipeline.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "thermonet/cli.hpp"

namespace {

namespace cli = thermonet::cli;

struct Common {
  std::string config;
  std::string out = "workspace";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::size_t> latent;
  std::optional<std::string> encoder_mode;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value experiment config")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "workspace directory")->capture_default_str();
  sub->add_option("--seed", c.seed, "master seed (overrides config)");
  sub->add_option("--variant", c.variant, "comma-separated variants (overrides eval.variants)");
  sub->add_option("--latent", c.latent, "latent size (overrides train.latent)");
  sub->add_option("--encoder-mode", c.encoder_mode, "frozen or finetune (overrides train/eval encoder mode)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thermonet: thermal-history part quality experiments"};
  app.require_subcommand(1);
  Common c;
  using Command = std::string (*)(const cli::Settings&, const std::filesystem::path&);
  const std::vector<std::tuple<std::string, std::string, std::vector<Command>>> commands = {
      {"synth", "generate synthetic print builds", {cli::cmd_synth}},
      {"preprocess", "build the dataset from synthetic builds", {cli::cmd_preprocess}},
      {"pretrain", "train reconstruction models", {cli::cmd_pretrain}},
      {"train", "train predictor variants", {cli::cmd_train}},
      {"eval", "evaluate trained predictors on the test split", {cli::cmd_eval}},
      {"sweep", "compare latent sizes", {cli::cmd_sweep}},
      {"plot", "data exploration figures", {cli::cmd_plot}},
      {"run",
       "synth, preprocess, pretrain, train, eval and plot in sequence",
       {cli::cmd_synth, cli::cmd_preprocess, cli::cmd_pretrain, cli::cmd_train, cli::cmd_eval, cli::cmd_plot}},
  };
  std::vector<std::pair<CLI::App*, const std::vector<Command>*>> subs;
  for (const auto& [name, help, steps] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, c);
    subs.emplace_back(sub, &steps);
  }
  CLI11_PARSE(app, argc, argv);
  try {
    cli::Overrides o{c.seed, c.variant, c.latent, c.encoder_mode};
    const cli::Settings s =
        cli::load_settings(c.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(c.config), o);
    for (const auto& [sub, steps] : subs) {
      if (!sub->parsed()) continue;
      for (Command step : *steps) std::cout << step(s, c.out) << std::endl;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
