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

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "jointnas/common.hpp"

namespace jointnas {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double mid() const { return 0.5 * (lo + hi); }
  double width() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

/// The joint search space: stage topology, FC depth, shortcuts, per-layer
/// keep-rates and the two training hyperparameters.
///
/// A kernel size of 0 marks an absent layer slot, which is how the encoding
/// controls depth while keeping the bit string at a fixed length.
struct SearchSpaceConfig {
  int num_stages = 5;
  int max_layers_per_stage = 3;
  std::vector<int> kernel_choices{0, 3, 5, 7};
  std::vector<int> fc_choices{1, 2, 3};
  Interval prune_range{0.3, 1.0};
  Interval batch_range{64.0, 144.0};
  Interval lr_range{0.01, 0.06};
  int m_bits_continuous = 8;
  std::vector<int> base_channels{8, 16, 32, 64, 64};
  int base_fc_width = 256;
  int input_channels = 3;
  int input_size = 32;

  // Frozen genes are still encoded (the layout never changes) but sampling and
  // decoding pin them: keep-rates to 1.0, hyperparameters to range midpoints.
  bool search_pruning = true;
  bool search_hyper = true;

  int shortcut_bit_count() const { return num_stages * (num_stages - 1) / 2; }
  int conv_slot_count() const { return num_stages * max_layers_per_stage; }
  int max_fc() const;
  int prune_slot_count() const { return conv_slot_count() + max_fc() - 1; }
  int conv_prune_slot(int stage, int slot) const { return stage * max_layers_per_stage + slot; }
  int fc_prune_slot(int fc_index) const { return conv_slot_count() + fc_index; }
  /// Index of the shortcut bit for stage pair (from, to), from < to, in
  /// lexicographic pair order.
  int shortcut_index(int from, int to) const;
  std::pair<int, int> shortcut_pair(int index) const;

  /// Throws RangeError when an invariant does not hold.
  void validate() const;
  bool operator==(const SearchSpaceConfig&) const = default;
};

struct Genome {
  std::vector<std::vector<int>> stage_kernels;
  int fc_count = 1;
  std::vector<std::uint8_t> shortcut_bits;
  std::vector<double> prune_rates;
  double batch_size = 64.0;
  double learning_rate = 0.01;

  int batch_size_int() const { return static_cast<int>(std::lround(batch_size)); }
  bool operator==(const Genome&) const = default;
};

/// Throws RangeError if g does not belong to the search space of cfg.
void validate_genome(const Genome& g, const SearchSpaceConfig& cfg);

enum class GeneKind { kDiscrete, kContinuous };

struct GeneSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t width = 0;
  GeneKind kind = GeneKind::kDiscrete;
  bool operator==(const GeneSlot&) const = default;
};

struct GenomeLayout {
  std::vector<GeneSlot> genes;
  std::size_t total_bits = 0;

  const GeneSlot& gene(const std::string& name) const;
  bool operator==(const GenomeLayout&) const = default;
};

/// Bits of ceil(log2(n)), at least 1.
int discrete_bits(std::size_t choice_count);

/// Gene order: stage kernels (stage-major), fc count, shortcut bits,
/// keep-rates, batch size, learning rate.
GenomeLayout make_layout(const SearchSpaceConfig& cfg);

struct EncodedGenome {
  std::vector<std::uint8_t> bits;
  std::shared_ptr<const GenomeLayout> layout;

  std::size_t size() const { return bits.size(); }
  /// ASCII '0'/'1' in layout order.
  std::string to_string() const;
  static EncodedGenome from_string(const std::string& s,
                                   std::shared_ptr<const GenomeLayout> layout);
  bool same_layout(const EncodedGenome& other) const;
  bool operator==(const EncodedGenome& other) const {
    return bits == other.bits && same_layout(other);
  }
};

Genome random_genome(const SearchSpaceConfig& cfg, std::uint64_t seed);

EncodedGenome encode(const Genome& g, const SearchSpaceConfig& cfg);
/// Reuses an existing layout object.
EncodedGenome encode(const Genome& g, const SearchSpaceConfig& cfg,
                     std::shared_ptr<const GenomeLayout> layout);

Genome decode(const EncodedGenome& e, const SearchSpaceConfig& cfg);

/// Quantizes a continuous value into one of 2^m_bits equal-width buckets.
std::uint32_t quantize_continuous(double value, const Interval& range, int m_bits);
/// Bucket midpoint.
double dequantize_continuous(std::uint32_t bucket, const Interval& range, int m_bits);

/// Two-point crossover exchanging bits in [cut_lo, cut_hi).
std::pair<EncodedGenome, EncodedGenome> crossover_at(const EncodedGenome& a, const EncodedGenome& b,
                                                    std::size_t cut_lo, std::size_t cut_hi);

struct CrossoverResult {
  EncodedGenome first;
  EncodedGenome second;
  std::size_t cut_lo = 0;
  std::size_t cut_hi = 0;
};

CrossoverResult crossover(const EncodedGenome& a, const EncodedGenome& b, std::uint64_t seed);

EncodedGenome mutate(const EncodedGenome& e, double p_mutate, std::uint64_t seed);

}  // namespace jointnas
