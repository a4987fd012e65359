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

#include "jointnas/evolve.hpp"
#include "jointnas/genome.hpp"
#include "jointnas/predictor.hpp"
#include "jointnas/pruner.hpp"
#include "jointnas/tensorkit.hpp"

namespace jointnas {

enum class SearchMode { kArch, kArchPruning, kArchPruningHyp };

const char* mode_name(SearchMode m);
SearchMode parse_mode(const std::string& s);

/// Everything a run needs besides its seed and output directory.
struct RunConfig {
  SearchMode mode = SearchMode::kArchPruningHyp;
  SearchSpaceConfig space;
  std::vector<int> arch_base_channels{4, 8, 16, 32, 32};
  EvolveConfig evolve;
  CalibrationConfig calib;
  PredictorConfig predictor;
  TrainConfig train;  // momentum and weight decay only
  std::int64_t max_params = 250000;
  double val_fraction = 0.2;

  // Empty dataset path selects the synthetic generator.
  std::string dataset;
  int synth_classes = 10;
  int synth_per_class = 60;
  int synth_size = 32;
  std::uint64_t synth_seed = 7;

  /// Search space with the mode's frozen genes and channel base applied.
  SearchSpaceConfig effective_space() const;
  void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys, duplicate
/// keys and malformed values throw ConfigError naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form listing every key; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

}  // namespace jointnas
