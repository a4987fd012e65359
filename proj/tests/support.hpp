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

// Helpers shared by the unit tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "jointnas/netbuild.hpp"
#include "jointnas/tensorkit.hpp"

namespace jointnas::testing {

/// Small search space: `stages` stages, channel base 4, 8, ... and the given
/// input size.
inline SearchSpaceConfig tiny_space(int stages, int input_size, int layers = 2) {
  SearchSpaceConfig cfg;
  cfg.num_stages = stages;
  cfg.max_layers_per_stage = layers;
  cfg.base_channels.clear();
  for (int s = 0; s < stages; ++s) cfg.base_channels.push_back(4 << std::min(s, 2));
  cfg.base_fc_width = 16;
  cfg.input_size = input_size;
  return cfg;
}

/// Single-purpose space for layer-level tests: explicit kernel choices, few
/// input channels and a narrow FC head.
inline SearchSpaceConfig layer_space(std::vector<int> base, int input_size, int layers, std::vector<int> kernels,
                                     int input_channels = 2, int fc_width = 5) {
  SearchSpaceConfig cfg;
  cfg.num_stages = static_cast<int>(base.size());
  cfg.base_channels = std::move(base);
  cfg.max_layers_per_stage = layers;
  cfg.kernel_choices = std::move(kernels);
  cfg.input_size = input_size;
  cfg.input_channels = input_channels;
  cfg.base_fc_width = fc_width;
  return cfg;
}

/// Genome with every slot of every stage set to `kernel`, rates 1, no shortcuts.
inline Genome full_genome(const SearchSpaceConfig& cfg, int kernel, int fc_count = 1) {
  Genome g = random_genome(cfg, 1);
  for (auto& stage : g.stage_kernels) std::fill(stage.begin(), stage.end(), kernel);
  g.fc_count = fc_count;
  std::fill(g.shortcut_bits.begin(), g.shortcut_bits.end(), 0);
  std::fill(g.prune_rates.begin(), g.prune_rates.end(), 1.0);
  return g;
}

inline Tensor random_batch(int n, int c, int size, std::uint64_t seed) {
  Tensor x({n, c, size, size});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (auto& v : x.data) v = d(rng);
  return x;
}

inline std::vector<int> random_labels(int n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = d(rng);
  return y;
}

/// Perturbs every trainable tensor so gradients are not degenerate (zero
/// biases, unit gammas).
inline void jitter(ModelState& st, std::uint64_t seed, float scale = 0.1f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, scale);
  for (auto& [name, t] : st.params) {
    for (auto& v : t.data) v += d(rng);
  }
}

inline constexpr double kKinkAbs = 1e-4;
inline constexpr double kKinkRel = 0.01;

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

/// Central differences against backprop for every trainable scalar whose
/// name starts with `prefix` (empty: all). Entries whose one-sided slopes, or
/// whose central differences at eps and eps/2, disagree beyond float noise
/// straddle a ReLU or max-pool switch, where the derivative does not exist;
/// those are counted and skipped.
inline GradCheck grad_check(const NetworkSpec& spec, ModelState st, const Tensor& x, const std::vector<int>& y,
                            const std::string& prefix = "", float eps = 1e-3f, double analytic_scale = 1.0) {
  GradCheck out;
  const Gradients g = compute_gradients(spec, st, x, y);
  const double l0 = g.loss;
  for (auto& [name, t] : st.params) {
    if (name.rfind(prefix, 0) != 0) continue;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const float orig = t.data[i];
      t.data[i] = orig + eps;
      const double lp = compute_gradients(spec, st, x, y).loss;
      t.data[i] = orig - eps;
      const double lm = compute_gradients(spec, st, x, y).loss;
      t.data[i] = orig;
      t.data[i] = orig + 0.5f * eps;
      const double lph = compute_gradients(spec, st, x, y).loss;
      t.data[i] = orig - 0.5f * eps;
      const double lmh = compute_gradients(spec, st, x, y).loss;
      t.data[i] = orig;
      const double fwd = (lp - l0) / eps;
      const double bwd = (l0 - lm) / eps;
      const double num = (lp - lm) / (2.0 * eps);
      const double half = (lph - lmh) / eps;
      const double tol = kKinkAbs + kKinkRel * std::max(std::abs(fwd), std::abs(bwd));
      if (std::abs(fwd - bwd) > tol || std::abs(num - half) > tol) {
        ++out.kinks;
        continue;
      }
      const double an = analytic_scale * g.grads.at(name).data[i];
      const double rel = std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-2});
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

struct GradCase {
  std::string name;
  NetworkSpec spec;
  int batch = 3;
};

/// One small network per layer type, plus a composed three-layer net.
inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> out;
  for (int k : {3, 5, 7}) {
    const auto cfg = layer_space({k == 3 ? 3 : 2}, k == 3 ? 4 : 8, 1, {0, k});
    out.push_back({"conv_bn_relu_k" + std::to_string(k), build(full_genome(cfg, k), cfg, 3), k == 3 ? 4 : 3});
  }
  {
    const auto cfg = layer_space({2}, 2, 1, {0, 1});
    out.push_back({"hidden_fc", build(full_genome(cfg, 1, 3), cfg, 3), 6});
  }
  {
    const auto cfg = layer_space({3, 3}, 4, 1, {0, 3});
    Genome g = full_genome(cfg, 3);
    g.shortcut_bits[0] = 1;
    out.push_back({"identity_shortcut", build(g, cfg, 3), 3});
  }
  {
    const auto cfg = layer_space({2, 3}, 4, 1, {0, 3});
    Genome g = full_genome(cfg, 3);
    g.shortcut_bits[0] = 1;
    out.push_back({"conv_shortcut", build(g, cfg, 3), 3});
  }
  {
    const auto cfg = layer_space({2, 2, 3}, 8, 1, {0, 3});
    Genome g = full_genome(cfg, 3);
    g.shortcut_bits[static_cast<std::size_t>(cfg.shortcut_index(0, 2))] = 1;
    out.push_back({"strided_conv_shortcut", build(g, cfg, 3), 3});
  }
  {
    const auto cfg = layer_space({3, 3}, 4, 1, {0, 3});
    out.push_back({"composed_three_layers", build(full_genome(cfg, 3, 2), cfg, 3), 3});
  }
  return out;
}

/// Gradient check over seeds 1..seeds on jittered fresh states.
inline GradCheck grad_check_seeds(const GradCase& c, int seeds) {
  GradCheck total;
  for (std::uint64_t s = 1; s <= static_cast<std::uint64_t>(seeds); ++s) {
    ModelState st = init_state(c.spec, s);
    jitter(st, s + 1);
    const GradCheck r = grad_check(c.spec, st, random_batch(c.batch, c.spec.input_channels, c.spec.input_size, s + 2),
                                   random_labels(c.batch, c.spec.num_classes, s + 3));
    if (r.max_rel >= total.max_rel) {
      total.max_rel = r.max_rel;
      total.worst = r.worst;
    }
    total.checked += r.checked;
    total.kinks += r.kinks;
  }
  return total;
}

}  // namespace jointnas::testing
