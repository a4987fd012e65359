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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace jointnas {

struct GenerationRow {
  int gen = 0;
  double mean_params = 0.0;
  double best_acc = 0.0;
  double mean_acc = 0.0;
  std::optional<double> cv_ktau;
};

struct RunSummary {
  std::string name;
  std::string kind;  // search or random
  std::string mode;
  std::uint64_t seed = 0;
  std::vector<GenerationRow> generations;
  bool finished = false;
  double best_acc = 0.0;
  std::int64_t best_params = 0;
  std::int64_t budget_epochs = 0;
  std::string best_spec;
  int skipped_lines = 0;
};

/// Everything is recomputed from the run's run.jsonl.
RunSummary summarize_run(const std::filesystem::path& run_dir);

/// Writes <name>_generations.csv and <name>_best.txt per run and, for two or
/// more runs, comparison.csv. Refuses (throws) to compare a random baseline
/// against a run with a different epoch budget.
std::vector<RunSummary> write_report(const std::vector<std::filesystem::path>& run_dirs,
                                     const std::filesystem::path& out);

}  // namespace jointnas
