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
#include <vector>

#include "jointnas/genome.hpp"
#include "jointnas/netbuild.hpp"
#include "jointnas/tensorkit.hpp"

namespace jointnas {

/// Keep-rates relative to the source network, one per prunable layer in
/// NetworkSpec::prunable_layers() order.
struct PruningStrategy {
  std::vector<double> rates;
};

struct PrunedNetwork {
  NetworkSpec spec;
  ModelState state;
};

/// Output channels each prunable layer keeps under `strategy`.
///
/// A layer keeps scaled_channels(current, rate) channels, but never fewer than
/// the search space allows for its slot (scaled_channels(base, prune_range.lo)),
/// so the result is always expressible as a genome.
std::vector<int> kept_channels(const NetworkSpec& src, const PruningStrategy& strategy,
                               const SearchSpaceConfig& cfg);

/// Copies the low-index block of `src` into a tensor of shape `shape`.
/// Every dimension of `shape` must be <= the matching source dimension.
Tensor slice_prefix(const Tensor& src, const std::vector<int>& shape);

/// Structured pruning by low-index slicing.
///
/// The pruned spec is rebuilt from a genome whose keep-rates reproduce the kept
/// channel counts. Identity shortcuts whose endpoints no longer match are
/// dropped (their genome bit cleared); 1x1 shortcuts are kept and sliced. All
/// other tensors, including BN running statistics, are prefix slices of the
/// source tensors. The logit layer is only sliced along its input.
PrunedNetwork slice_weights(const ModelState& src_state, const NetworkSpec& src_spec,
                            const PruningStrategy& strategy, const SearchSpaceConfig& cfg);

struct CalibrationConfig {
  int num_batches = 20;
  int batch_size = 16;
};

/// Refreshes BN running statistics with forward passes over training batches
/// drawn by `seed`. Trainable tensors are left untouched.
void recalibrate_bn(const NetworkSpec& spec, ModelState& state, const LabeledData& train,
                    const CalibrationConfig& calib, std::uint64_t seed);

struct PruneConfig {
  int num_samples = 20;
  int num_keep = 3;
  CalibrationConfig calib;
  std::int64_t max_params = 0;  // 0 disables the gate
};

/// One sampled strategy and its evaluation.
struct PruneEval {
  std::size_t sample_index = 0;
  std::vector<double> rates;
  std::int64_t params = 0;
  bool feasible = true;
  double acc_pre_calib = 0.0;
  double acc_post_calib = 0.0;
  bool kept = false;
};

struct PrunedCandidate {
  NetworkSpec spec;
  ModelState state;
  double inference_accuracy = 0.0;
  PruningStrategy strategy;
  std::size_t sample_index = 0;
  bool diverged = false;  // fine-tuning went non-finite
};

struct PruneSelection {
  std::vector<PrunedCandidate> kept;
  std::vector<PruneEval> evals;  // in sample order
  bool all_infeasible = false;
};

/// Uniformly samples strategies over prune_range, slices, recalibrates and
/// ranks by validation accuracy (then fewer params, then sample order).
/// Strategies over the parameter gate are skipped before ranking; a strategy
/// whose logits go non-finite scores 0.
PruneSelection propose_and_select(const NetworkSpec& parent_spec, const ModelState& parent_state,
                                  const SearchSpaceConfig& cfg, const LabeledData& train,
                                  const LabeledData& val, const PruneConfig& pc, std::uint64_t seed);

/// Evaluates the given strategies instead of sampling them.
PruneSelection evaluate_strategies(const NetworkSpec& parent_spec, const ModelState& parent_state,
                                   const SearchSpaceConfig& cfg, const LabeledData& train,
                                   const LabeledData& val, const PruneConfig& pc,
                                   const std::vector<PruningStrategy>& strategies, std::uint64_t seed);

/// Fine-tunes for cfg.epochs and returns the validation accuracy afterwards.
/// Batch size and learning rate are overridden by the genome's own genes. A
/// diverging fine-tune keeps the pre-fine-tune weights and scores 0.
double finetune_pruned(PrunedCandidate& p, const LabeledData& train, const LabeledData& val, TrainConfig cfg);

}  // namespace jointnas
