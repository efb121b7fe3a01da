//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//


// meterlink command-line driver.
//
//   meterlink_cli <generate|preprocess|train|attack|baseline|report>
//       [--config FILE] [--seed N] [--workers N] --out DIR [--overwrite]
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "meterlink/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace meterlink;
  CLI::App app{"Smart-meter re-identification toolkit"};
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  bool overwrite = false;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--seed", seed, "global seed (overrides the config's seed key)");
  app.add_option("--workers", workers, "parallel jobs")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory");
  app.add_flag("--overwrite", overwrite, "replace existing outputs");
  app.require_subcommand(1, 1);
  for (const char* name : {"generate", "preprocess", "train", "attack", "baseline", "report"})
    app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigExit;
  }

  try {
    cli::Invocation inv;
    inv.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) inv.config = cli::RunConfig::load(config_path);
    inv.seed = seed ? *seed : static_cast<std::uint64_t>(inv.config.get_int("seed", 1));
    inv.workers = workers;
    inv.out = out;
    inv.overwrite = overwrite;
    cli::run(inv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return 0;
}
