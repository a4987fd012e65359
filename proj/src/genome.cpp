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

#include "jointnas/genome.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace jointnas {

int SearchSpaceConfig::max_fc() const {
  return fc_choices.empty() ? 1 : *std::max_element(fc_choices.begin(), fc_choices.end());
}

int SearchSpaceConfig::shortcut_index(int from, int to) const {
  if (from < 0 || to >= num_stages || from >= to) {
    throw RangeError("shortcut pair out of range");
  }
  // Pairs (0,1),(0,2),...,(0,S-1),(1,2),...
  int idx = 0;
  for (int i = 0; i < from; ++i) idx += num_stages - 1 - i;
  return idx + (to - from - 1);
}

std::pair<int, int> SearchSpaceConfig::shortcut_pair(int index) const {
  int idx = 0;
  for (int i = 0; i < num_stages; ++i) {
    for (int j = i + 1; j < num_stages; ++j) {
      if (idx == index) return {i, j};
      ++idx;
    }
  }
  throw RangeError("shortcut index out of range");
}

void SearchSpaceConfig::validate() const {
  if (num_stages < 1) throw RangeError("num_stages must be >= 1");
  if (max_layers_per_stage < 1) throw RangeError("max_layers_per_stage must be >= 1");
  if (kernel_choices.empty() || kernel_choices.front() != 0) {
    throw RangeError("kernel_choices must start with 0 (absent layer)");
  }
  if (kernel_choices.size() < 2) throw RangeError("kernel_choices needs a nonzero kernel");
  for (std::size_t i = 1; i < kernel_choices.size(); ++i) {
    if (kernel_choices[i] <= kernel_choices[i - 1]) {
      throw RangeError("kernel_choices must be strictly increasing");
    }
  }
  if (fc_choices.empty()) throw RangeError("fc_choices must not be empty");
  for (int f : fc_choices) {
    if (f < 1) throw RangeError("fc_choices entries must be >= 1");
  }
  if (prune_range.lo <= 0.0) throw RangeError("prune_range lower bound must be > 0");
  if (prune_range.hi > 1.0) throw RangeError("prune_range upper bound must be <= 1");
  for (const Interval* r : {&prune_range, &batch_range, &lr_range}) {
    if (!(r->lo < r->hi)) throw RangeError("range bounds must satisfy min < max");
  }
  if (batch_range.lo < 1.0) throw RangeError("batch_range must be >= 1");
  if (m_bits_continuous < 1 || m_bits_continuous > 24) {
    throw RangeError("m_bits_continuous must be in [1, 24]");
  }
  if (static_cast<int>(base_channels.size()) != num_stages) {
    throw RangeError("base_channels must list one entry per stage");
  }
  for (int c : base_channels) {
    if (c < 1) throw RangeError("base_channels entries must be >= 1");
  }
  if (base_fc_width < 1) throw RangeError("base_fc_width must be >= 1");
  if (input_channels < 1) throw RangeError("input_channels must be >= 1");
}

void validate_genome(const Genome& g, const SearchSpaceConfig& cfg) {
  if (static_cast<int>(g.stage_kernels.size()) != cfg.num_stages) {
    throw RangeError("genome stage count mismatch");
  }
  for (const auto& stage : g.stage_kernels) {
    if (static_cast<int>(stage.size()) != cfg.max_layers_per_stage) {
      throw RangeError("genome layer slot count mismatch");
    }
    bool any = false;
    for (int k : stage) {
      if (std::find(cfg.kernel_choices.begin(), cfg.kernel_choices.end(), k) ==
          cfg.kernel_choices.end()) {
        throw RangeError("kernel size " + std::to_string(k) + " not in kernel_choices");
      }
      any = any || k != 0;
    }
    if (!any) throw RangeError("stage without any layer");
  }
  if (std::find(cfg.fc_choices.begin(), cfg.fc_choices.end(), g.fc_count) == cfg.fc_choices.end()) {
    throw RangeError("fc_count " + std::to_string(g.fc_count) + " not in fc_choices");
  }
  if (static_cast<int>(g.shortcut_bits.size()) != cfg.shortcut_bit_count()) {
    throw RangeError("shortcut bit count mismatch");
  }
  for (auto b : g.shortcut_bits) {
    if (b > 1) throw RangeError("shortcut bits must be 0 or 1");
  }
  if (static_cast<int>(g.prune_rates.size()) != cfg.prune_slot_count()) {
    throw RangeError("prune rate count mismatch");
  }
  for (double r : g.prune_rates) {
    if (!(cfg.prune_range.contains(r) || (!cfg.search_pruning && r == 1.0))) {
      throw RangeError("prune rate " + std::to_string(r) + " outside prune_range");
    }
  }
  if (!cfg.batch_range.contains(g.batch_size)) throw RangeError("batch_size outside batch_range");
  if (!cfg.lr_range.contains(g.learning_rate)) throw RangeError("learning_rate outside lr_range");
}

const GeneSlot& GenomeLayout::gene(const std::string& name) const {
  for (const auto& g : genes) {
    if (g.name == name) return g;
  }
  throw LayoutError("unknown gene '" + name + "'");
}

int discrete_bits(std::size_t choice_count) {
  int m = 0;
  while ((std::size_t{1} << m) < choice_count) ++m;
  return std::max(m, 1);
}

GenomeLayout make_layout(const SearchSpaceConfig& cfg) {
  GenomeLayout layout;
  auto add = [&](std::string name, std::size_t width, GeneKind kind) {
    layout.genes.push_back({std::move(name), layout.total_bits, width, kind});
    layout.total_bits += width;
  };
  const auto kbits = static_cast<std::size_t>(discrete_bits(cfg.kernel_choices.size()));
  for (int s = 0; s < cfg.num_stages; ++s) {
    for (int l = 0; l < cfg.max_layers_per_stage; ++l) {
      add("kernel." + std::to_string(s) + "." + std::to_string(l), kbits, GeneKind::kDiscrete);
    }
  }
  add("fc_count", static_cast<std::size_t>(discrete_bits(cfg.fc_choices.size())), GeneKind::kDiscrete);
  for (int i = 0; i < cfg.shortcut_bit_count(); ++i) {
    add("shortcut." + std::to_string(i), 1, GeneKind::kDiscrete);
  }
  const auto m = static_cast<std::size_t>(cfg.m_bits_continuous);
  for (int i = 0; i < cfg.prune_slot_count(); ++i) {
    add("prune." + std::to_string(i), m, GeneKind::kContinuous);
  }
  add("batch_size", m, GeneKind::kContinuous);
  add("learning_rate", m, GeneKind::kContinuous);
  return layout;
}

std::string EncodedGenome::to_string() const {
  std::string s(bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? '1' : '0';
  return s;
}

EncodedGenome EncodedGenome::from_string(const std::string& s,
                                         std::shared_ptr<const GenomeLayout> layout) {
  if (!layout) throw LayoutError("missing layout");
  if (s.size() != layout->total_bits) {
    throw LayoutError("bit string length " + std::to_string(s.size()) + " does not match layout length " +
                      std::to_string(layout->total_bits));
  }
  EncodedGenome e;
  e.layout = std::move(layout);
  e.bits.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') throw LayoutError("bit string may only contain '0' and '1'");
    e.bits[i] = s[i] == '1' ? 1 : 0;
  }
  return e;
}

bool EncodedGenome::same_layout(const EncodedGenome& other) const {
  if (layout == other.layout) return true;
  if (!layout || !other.layout) return false;
  return *layout == *other.layout;
}

namespace {

// Repairs stages with no layer by forcing one slot to a nonzero kernel.
void repair_random(Genome& g, const SearchSpaceConfig& cfg, std::mt19937_64& rng) {
  for (auto& stage : g.stage_kernels) {
    if (std::any_of(stage.begin(), stage.end(), [](int k) { return k != 0; })) continue;
    std::uniform_int_distribution<int> slot(0, cfg.max_layers_per_stage - 1);
    std::uniform_int_distribution<std::size_t> kernel(1, cfg.kernel_choices.size() - 1);
    const int at = slot(rng);
    stage[static_cast<std::size_t>(at)] = cfg.kernel_choices[kernel(rng)];
  }
}

void repair_deterministic(Genome& g, const SearchSpaceConfig& cfg) {
  for (auto& stage : g.stage_kernels) {
    if (std::any_of(stage.begin(), stage.end(), [](int k) { return k != 0; })) continue;
    stage.front() = cfg.kernel_choices[1];
  }
}

void pin_frozen(Genome& g, const SearchSpaceConfig& cfg) {
  if (!cfg.search_pruning) std::fill(g.prune_rates.begin(), g.prune_rates.end(), 1.0);
  if (!cfg.search_hyper) {
    g.batch_size = cfg.batch_range.mid();
    g.learning_rate = cfg.lr_range.mid();
  }
}

void write_uint(std::vector<std::uint8_t>& bits, std::size_t offset, std::size_t width,
                std::uint32_t value) {
  // Most significant bit first, left padded with zeros.
  for (std::size_t i = 0; i < width; ++i) {
    bits[offset + i] = static_cast<std::uint8_t>((value >> (width - 1 - i)) & 1U);
  }
}

std::uint32_t read_uint(const std::vector<std::uint8_t>& bits, std::size_t offset, std::size_t width) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v = (v << 1) | (bits[offset + i] & 1U);
  return v;
}

std::uint32_t index_of(const std::vector<int>& choices, int value, const char* what) {
  auto it = std::find(choices.begin(), choices.end(), value);
  if (it == choices.end()) {
    throw RangeError(std::string(what) + " value " + std::to_string(value) + " not among choices");
  }
  return static_cast<std::uint32_t>(it - choices.begin());
}

}  // namespace

Genome random_genome(const SearchSpaceConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Genome g;
  std::uniform_int_distribution<std::size_t> kpick(0, cfg.kernel_choices.size() - 1);
  g.stage_kernels.assign(static_cast<std::size_t>(cfg.num_stages), {});
  for (auto& stage : g.stage_kernels) {
    stage.resize(static_cast<std::size_t>(cfg.max_layers_per_stage));
    for (auto& k : stage) k = cfg.kernel_choices[kpick(rng)];
  }
  std::uniform_int_distribution<std::size_t> fpick(0, cfg.fc_choices.size() - 1);
  g.fc_count = cfg.fc_choices[fpick(rng)];
  std::bernoulli_distribution coin(0.5);
  g.shortcut_bits.resize(static_cast<std::size_t>(cfg.shortcut_bit_count()));
  for (auto& b : g.shortcut_bits) b = coin(rng) ? 1 : 0;
  std::uniform_real_distribution<double> rate(cfg.prune_range.lo, cfg.prune_range.hi);
  g.prune_rates.resize(static_cast<std::size_t>(cfg.prune_slot_count()));
  for (auto& r : g.prune_rates) r = rate(rng);
  g.batch_size = std::uniform_real_distribution<double>(cfg.batch_range.lo, cfg.batch_range.hi)(rng);
  g.learning_rate = std::uniform_real_distribution<double>(cfg.lr_range.lo, cfg.lr_range.hi)(rng);
  repair_random(g, cfg, rng);
  pin_frozen(g, cfg);
  return g;
}

std::uint32_t quantize_continuous(double value, const Interval& range, int m_bits) {
  if (!range.contains(value)) {
    std::ostringstream os;
    os << "value " << value << " outside [" << range.lo << ", " << range.hi << "]";
    throw RangeError(os.str());
  }
  const double scale = static_cast<double>(std::uint64_t{1} << m_bits);
  const auto top = static_cast<std::uint32_t>((std::uint64_t{1} << m_bits) - 1);
  // A tiny relative slack keeps exact bucket boundaries (0.035 -> 128) from
  // falling into the previous bucket through representation error.
  const double x = (value - range.lo) / range.width() * scale;
  const auto k = static_cast<std::uint64_t>(x + 1e-9 * scale);
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(k, top));
}

double dequantize_continuous(std::uint32_t bucket, const Interval& range, int m_bits) {
  const double scale = static_cast<double>(std::uint64_t{1} << m_bits);
  return range.lo + (static_cast<double>(bucket) + 0.5) / scale * range.width();
}

EncodedGenome encode(const Genome& g, const SearchSpaceConfig& cfg) {
  return encode(g, cfg, std::make_shared<const GenomeLayout>(make_layout(cfg)));
}

EncodedGenome encode(const Genome& g, const SearchSpaceConfig& cfg,
                     std::shared_ptr<const GenomeLayout> layout) {
  validate_genome(g, cfg);
  EncodedGenome e;
  e.layout = std::move(layout);
  e.bits.assign(e.layout->total_bits, 0);
  auto it = e.layout->genes.begin();
  auto put = [&](std::uint32_t v) {
    write_uint(e.bits, it->offset, it->width, v);
    ++it;
  };
  for (const auto& stage : g.stage_kernels) {
    for (int k : stage) put(index_of(cfg.kernel_choices, k, "kernel"));
  }
  put(index_of(cfg.fc_choices, g.fc_count, "fc_count"));
  for (auto b : g.shortcut_bits) put(b);
  const int m = cfg.m_bits_continuous;
  for (double r : g.prune_rates) put(quantize_continuous(r, cfg.prune_range, m));
  put(quantize_continuous(g.batch_size, cfg.batch_range, m));
  put(quantize_continuous(g.learning_rate, cfg.lr_range, m));
  return e;
}

Genome decode(const EncodedGenome& e, const SearchSpaceConfig& cfg) {
  if (!e.layout) throw LayoutError("encoded genome has no layout");
  const GenomeLayout expected = make_layout(cfg);
  if (e.bits.size() != expected.total_bits || !(*e.layout == expected)) {
    throw LayoutError("encoded genome length " + std::to_string(e.bits.size()) +
                      " does not match layout length " + std::to_string(expected.total_bits));
  }
  auto it = expected.genes.begin();
  auto take = [&]() {
    const std::uint32_t v = read_uint(e.bits, it->offset, it->width);
    ++it;
    return v;
  };
  Genome g;
  g.stage_kernels.assign(static_cast<std::size_t>(cfg.num_stages),
                         std::vector<int>(static_cast<std::size_t>(cfg.max_layers_per_stage)));
  for (auto& stage : g.stage_kernels) {
    for (auto& k : stage) k = cfg.kernel_choices[take() % cfg.kernel_choices.size()];
  }
  g.fc_count = cfg.fc_choices[take() % cfg.fc_choices.size()];
  g.shortcut_bits.resize(static_cast<std::size_t>(cfg.shortcut_bit_count()));
  for (auto& b : g.shortcut_bits) b = static_cast<std::uint8_t>(take());
  const int m = cfg.m_bits_continuous;
  g.prune_rates.resize(static_cast<std::size_t>(cfg.prune_slot_count()));
  for (auto& r : g.prune_rates) r = dequantize_continuous(take(), cfg.prune_range, m);
  g.batch_size = dequantize_continuous(take(), cfg.batch_range, m);
  g.learning_rate = dequantize_continuous(take(), cfg.lr_range, m);
  repair_deterministic(g, cfg);
  pin_frozen(g, cfg);
  return g;
}

std::pair<EncodedGenome, EncodedGenome> crossover_at(const EncodedGenome& a, const EncodedGenome& b,
                                                    std::size_t cut_lo, std::size_t cut_hi) {
  if (!a.same_layout(b) || a.size() != b.size()) throw LayoutError("crossover parents differ in layout");
  if (cut_lo > cut_hi || cut_hi > a.size()) throw RangeError("crossover cuts out of range");
  EncodedGenome c1 = a;
  EncodedGenome c2 = b;
  for (std::size_t i = cut_lo; i < cut_hi; ++i) std::swap(c1.bits[i], c2.bits[i]);
  return {std::move(c1), std::move(c2)};
}

CrossoverResult crossover(const EncodedGenome& a, const EncodedGenome& b, std::uint64_t seed) {
  if (!a.same_layout(b) || a.size() != b.size()) throw LayoutError("crossover parents differ in layout");
  std::mt19937_64 rng(seed);
  const std::size_t n = a.size();
  // Uniform over pairs u < v drawn from {0, ..., n}.
  std::uniform_int_distribution<std::size_t> pos(0, n);
  std::size_t u = pos(rng);
  std::size_t v = pos(rng);
  while (v == u) v = pos(rng);
  if (u > v) std::swap(u, v);
  auto [c1, c2] = crossover_at(a, b, u, v);
  return {std::move(c1), std::move(c2), u, v};
}

EncodedGenome mutate(const EncodedGenome& e, double p_mutate, std::uint64_t seed) {
  if (!(p_mutate >= 0.0 && p_mutate <= 1.0)) throw RangeError("p_mutate must lie in [0, 1]");
  EncodedGenome out = e;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(p_mutate);
  for (auto& b : out.bits) {
    if (flip(rng)) b ^= 1U;
  }
  return out;
}

}  // namespace jointnas
