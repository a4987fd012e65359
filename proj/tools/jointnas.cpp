// Copyright 2026 The jointnas Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command line front end: search, random, report, gen-data.

#include <iostream>

#include "CLI11.hpp"
#include "jointnas/config.hpp"
#include "jointnas/dataset.hpp"
#include "jointnas/report.hpp"
#include "jointnas/search.hpp"

namespace {

void print_final(const jointnas::FinalReport& r) {
  if (!r.complete) {
    std::cout << "stopped early; resume with --resume\n";
    return;
  }
  std::cout << "best candidate " << r.best_id << ": accuracy " << r.accuracy << ", params " << r.params
            << ", budget " << r.budget_epochs << " epochs\n"
            << r.spec_text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint architecture, pruning and hyperparameter search"};
  app.require_subcommand(1);

  std::string config_path, out_dir, budget_from, data_out;
  std::uint64_t seed = 0;
  int jobs = 1, stop_after = 0;
  bool resume = false;

  auto* search = app.add_subcommand("search", "Run the evolutionary search");
  search->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  search->add_option("--seed", seed, "Run seed")->required();
  search->add_option("--out", out_dir, "Output directory")->required();
  search->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  search->add_flag("--resume", resume, "Continue from the latest checkpoint in --out");
  search->add_option("--stop-after", stop_after, "Stop after checkpointing this generation")
      ->check(CLI::NonNegativeNumber);

  auto* random = app.add_subcommand("random", "Random-search baseline at a finished search's budget");
  random->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  random->add_option("--budget-from", budget_from, "Finished search run directory")->required()->check(CLI::ExistingDirectory);
  random->add_option("--out", out_dir, "Output directory")->required();
  random->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> run_dirs;
  auto* report = app.add_subcommand("report", "Summarize run directories into CSVs");
  report->add_option("runs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", out_dir, "Output directory")->required();

  int classes = 10, per_class = 60, size = 32;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--classes", classes, "Class count")->required();
  gen->add_option("--per-class", per_class, "Samples per class")->required();
  gen->add_option("--size", size, "Image side in pixels")->required();
  gen->add_option("--seed", seed, "Generator seed")->required();
  gen->add_option("--out", data_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*search) {
      const auto cfg = jointnas::load_config(config_path);
      print_final(jointnas::run_search(cfg, {out_dir, seed, jobs, resume, stop_after}));
    } else if (*random) {
      const auto cfg = jointnas::load_config(config_path);
      print_final(jointnas::run_random_baseline(cfg, budget_from, {out_dir, 0, jobs, false, 0}));
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      for (const auto& r : jointnas::write_report(dirs, out_dir)) {
        std::cout << r.name << " (" << r.kind << "): best " << r.best_acc << ", params " << r.best_params
                  << ", budget " << r.budget_epochs << " epochs";
        if (r.skipped_lines) std::cout << ", skipped " << r.skipped_lines << " malformed lines";
        std::cout << "\n";
      }
    } else if (*gen) {
      const auto ds = jointnas::generate_synthetic(classes, per_class, size, seed);
      jointnas::write_dataset(data_out, ds);
      std::cout << "wrote " << ds.n << " images to " << data_out << "\n";
    }
  } catch (const jointnas::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
