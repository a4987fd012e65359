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
#include <string>
#include <vector>

#include "json.hpp"

#include "jointnas/config.hpp"
#include "jointnas/dataset.hpp"

namespace jointnas {

struct SearchOptions {
  std::filesystem::path out;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool resume = false;
  int stop_after = 0;  // stop once this generation is checkpointed; 0 runs to the end
};

struct FinalReport {
  bool complete = false;
  std::int64_t best_id = -1;
  double accuracy = 0.0;
  std::int64_t params = 0;
  std::string encoded;
  std::string spec_text;
  std::int64_t budget_epochs = 0;
};

struct PreparedData {
  LabeledData train;
  LabeledData val;
  Normalization norm;
  int num_classes = 0;
};

/// Loads or generates the dataset, splits it under `seed` and normalizes with
/// training-split statistics.
PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed);

/// The full evolutionary search. Writes into opts.out:
///   config.txt, run.jsonl, best.txt and checkpoints/gen_<g>/.
FinalReport run_search(const RunConfig& cfg, const SearchOptions& opts);

/// Trains random feasible candidates for the epoch budget logged by a finished
/// search run and reports the best one. The seed is taken from that run.
FinalReport run_random_baseline(const RunConfig& cfg, const std::filesystem::path& budget_from,
                                const SearchOptions& opts);

/// Parsed run.jsonl; malformed lines are skipped and counted.
struct RunLog {
  std::vector<nlohmann::json> events;
  int skipped = 0;
};
RunLog read_run_log(const std::filesystem::path& path);

/// Compares two logs event by event, ignoring timestamp fields. On mismatch
/// `why` describes the first difference.
bool same_run_log(const std::filesystem::path& a, const std::filesystem::path& b, std::string* why = nullptr);

}  // namespace jointnas
