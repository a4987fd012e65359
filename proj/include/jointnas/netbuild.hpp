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
#include <string>
#include <vector>

#include "jointnas/genome.hpp"

namespace jointnas {

enum class LayerRole { kConv, kFc, kMaxPool, kShortcutIdentity, kShortcutConv1x1 };

const char* role_name(LayerRole role);

/// One node of the lowered network.
///
/// Conv layers imply a trailing batch norm and ReLU. Hidden FC layers imply a
/// ReLU; the last FC emits logits. Shortcut layers read the pooled output of
/// `from_stage` and are added to the activation of `stage_index` just before
/// that stage's max-pool.
struct LayerSpec {
  LayerRole role = LayerRole::kConv;
  int stage_index = -1;  // -1 for FC layers
  int slot_index = 0;    // layer slot within the stage, or FC index
  int in_channels = 0;   // features for FC layers
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  double prune_rate = 1.0;
  int from_stage = -1;   // shortcuts only
  int in_spatial = 0;    // input height (== width)
  int out_spatial = 0;

  bool is_main_path() const {
    return role == LayerRole::kConv || role == LayerRole::kFc || role == LayerRole::kMaxPool;
  }
  bool is_prunable() const { return role == LayerRole::kConv || role == LayerRole::kFc; }
  /// Stable identity used for weight naming and inheritance matching.
  std::string key() const;
  bool operator==(const LayerSpec&) const = default;
};

struct Shortcut {
  int from_stage = 0;
  int to_stage = 0;
  LayerRole kind = LayerRole::kShortcutIdentity;
  bool operator==(const Shortcut&) const = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<Shortcut> shortcuts;
  std::int64_t param_count = 0;
  Genome source_genome;
  int input_channels = 3;
  int input_size = 32;
  int num_classes = 10;

  /// Output channels of each stage (last conv layer of the stage).
  std::vector<int> stage_channels() const;
  /// Indices into `layers` of prunable layers, in order; the final FC is
  /// excluded because its width is the class count.
  std::vector<std::size_t> prunable_layers() const;
  bool same_structure(const NetworkSpec& other) const {
    return layers == other.layers && shortcuts == other.shortcuts && param_count == other.param_count;
  }
};

/// Trainable scalars of one layer: weights, biases and BN affine pairs.
std::int64_t layer_param_count(const LayerSpec& layer);
/// Sum over layers; NetworkSpec::param_count caches this value.
std::int64_t count_params(const std::vector<LayerSpec>& layers);

/// Shortcut kinds for every set bit. Adjacent stages with equal channel counts
/// get an identity; anything else (channel mismatch, or crossing more than one
/// pooling boundary) gets a strided 1x1 conv.
std::vector<Shortcut> resolve_shortcuts(const Genome& g, const SearchSpaceConfig& cfg,
                                        const std::vector<int>& stage_channels);

NetworkSpec build(const Genome& g, const SearchSpaceConfig& cfg, int num_classes);
/// Same, but with an explicit shortcut list instead of the genome's bits.
/// Pruned networks use this to keep 1x1 shortcuts whose endpoints happen to
/// match after slicing.
NetworkSpec build(const Genome& g, const SearchSpaceConfig& cfg, int num_classes,
                  const std::vector<Shortcut>* fixed_shortcuts);

/// Resource gate: strict `param_count < max_params`.
bool check_constraint(const NetworkSpec& spec, std::int64_t max_params);

/// Layer-per-line text block: role, kernel, in->out channels, rate.
std::string render(const NetworkSpec& spec);

}  // namespace jointnas
