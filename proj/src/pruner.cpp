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

#include "jointnas/pruner.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace jointnas {

namespace {

int base_width(const LayerSpec& l, const SearchSpaceConfig& cfg) {
  if (l.role == LayerRole::kConv) return cfg.base_channels.at(static_cast<std::size_t>(l.stage_index));
  return cfg.base_fc_width;
}

int rate_slot(const LayerSpec& l, const SearchSpaceConfig& cfg) {
  if (l.role == LayerRole::kConv) return cfg.conv_prune_slot(l.stage_index, l.slot_index);
  return cfg.fc_prune_slot(l.slot_index);
}

}  // namespace

std::vector<int> kept_channels(const NetworkSpec& src, const PruningStrategy& strategy,
                               const SearchSpaceConfig& cfg) {
  const auto prunable = src.prunable_layers();
  if (strategy.rates.size() != prunable.size()) {
    throw RangeError("strategy has " + std::to_string(strategy.rates.size()) + " rates but the network has " +
                     std::to_string(prunable.size()) + " prunable layers");
  }
  std::vector<int> kept;
  kept.reserve(prunable.size());
  for (std::size_t i = 0; i < prunable.size(); ++i) {
    const double p = strategy.rates[i];
    if (!cfg.prune_range.contains(p)) throw RangeError("strategy rate " + std::to_string(p) + " outside prune_range");
    const LayerSpec& l = src.layers[prunable[i]];
    const int floor = scaled_channels(base_width(l, cfg), cfg.prune_range.lo);
    kept.push_back(std::min(l.out_channels, std::max(scaled_channels(l.out_channels, p), floor)));
  }
  return kept;
}

Tensor slice_prefix(const Tensor& src, const std::vector<int>& shape) {
  if (shape.size() != src.shape.size()) throw ShapeError("slice rank mismatch");
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] > src.shape[d] || shape[d] < 0) throw ShapeError("slice larger than source tensor");
  }
  Tensor out(shape);
  if (out.numel() == 0) return out;
  const std::size_t rank = shape.size();
  // Row-major walk over the destination; the innermost dimension is contiguous
  // in both tensors.
  std::vector<std::size_t> src_stride(rank, 1);
  for (std::size_t d = rank - 1; d > 0; --d) src_stride[d - 1] = src_stride[d] * static_cast<std::size_t>(src.shape[d]);
  const auto inner = static_cast<std::size_t>(shape[rank - 1]);
  std::vector<int> idx(rank, 0);
  for (std::size_t o = 0; o < out.numel(); o += inner) {
    std::size_t s = 0;
    for (std::size_t d = 0; d + 1 < rank; ++d) s += static_cast<std::size_t>(idx[d]) * src_stride[d];
    std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(s), inner, out.data.begin() + static_cast<std::ptrdiff_t>(o));
    for (std::size_t d = rank - 1; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

PrunedNetwork slice_weights(const ModelState& src_state, const NetworkSpec& src_spec,
                            const PruningStrategy& strategy, const SearchSpaceConfig& cfg) {
  const auto prunable = src_spec.prunable_layers();
  const std::vector<int> kept = kept_channels(src_spec, strategy, cfg);

  Genome g = src_spec.source_genome;
  std::vector<int> stage_out(static_cast<std::size_t>(cfg.num_stages), 0);
  for (std::size_t i = 0; i < prunable.size(); ++i) {
    const LayerSpec& l = src_spec.layers[prunable[i]];
    if (l.role == LayerRole::kConv) stage_out[static_cast<std::size_t>(l.stage_index)] = kept[i];
    if (kept[i] == l.out_channels) continue;
    const int base = base_width(l, cfg);
    const double rate = std::clamp(static_cast<double>(kept[i]) / base, cfg.prune_range.lo, cfg.prune_range.hi);
    if (scaled_channels(base, rate) != kept[i]) {
      throw Error("internal: keep-rate " + std::to_string(rate) + " does not reproduce " + std::to_string(kept[i]) +
                  " channels for " + l.key());
    }
    g.prune_rates[static_cast<std::size_t>(rate_slot(l, cfg))] = rate;
  }

  std::vector<Shortcut> shortcuts;
  for (const auto& sc : src_spec.shortcuts) {
    if (sc.kind == LayerRole::kShortcutIdentity && stage_out[static_cast<std::size_t>(sc.from_stage)] !=
                                                       stage_out[static_cast<std::size_t>(sc.to_stage)]) {
      g.shortcut_bits[static_cast<std::size_t>(cfg.shortcut_index(sc.from_stage, sc.to_stage))] = 0;
      continue;
    }
    shortcuts.push_back(sc);
  }

  PrunedNetwork out;
  out.spec = build(g, cfg, src_spec.num_classes, &shortcuts);
  for (const auto& [name, shape] : param_shapes(out.spec)) {
    out.state.params[name] = slice_prefix(src_state.params.at(name), shape);
  }
  for (const auto& [name, shape] : buffer_shapes(out.spec)) {
    out.state.buffers[name] = slice_prefix(src_state.buffers.at(name), shape);
  }
  return out;
}

void recalibrate_bn(const NetworkSpec& spec, ModelState& state, const LabeledData& train,
                    const CalibrationConfig& calib, std::uint64_t seed) {
  if (calib.num_batches < 1) throw RangeError("bn_calib_batches must be >= 1");
  if (calib.batch_size < 2) throw RangeError("bn_calib_batch_size must be >= 2");
  if (train.size() < 2) throw RangeError("calibration needs at least two samples");
  const std::size_t n = train.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(calib.batch_size), n);
  std::vector<std::size_t> order(n);
  std::size_t pos = n;
  std::uint64_t round = 0;
  std::vector<std::size_t> idx(bs);
  for (int b = 0; b < calib.num_batches; ++b) {
    for (std::size_t i = 0; i < bs; ++i) {
      if (pos == n) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(seed, "calib", round++));
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      idx[i] = order[pos++];
    }
    forward(spec, state, train.gather(idx), Mode::kBnCalibrate);
  }
}

namespace {

double finite_accuracy(const NetworkSpec& spec, const ModelState& state, const LabeledData& val) {
  try {
    return evaluate(spec, state, val);
  } catch (const NumericError&) {
    return 0.0;
  }
}

}  // namespace

PruneSelection evaluate_strategies(const NetworkSpec& parent_spec, const ModelState& parent_state,
                                   const SearchSpaceConfig& cfg, const LabeledData& train,
                                   const LabeledData& val, const PruneConfig& pc,
                                   const std::vector<PruningStrategy>& strategies, std::uint64_t seed) {
  if (pc.num_keep < 1) throw RangeError("prune_keep must be >= 1");
  if (static_cast<std::size_t>(pc.num_keep) > strategies.size()) {
    throw RangeError("prune_keep must not exceed the number of sampled strategies");
  }
  PruneSelection sel;
  std::vector<PrunedCandidate> feasible;
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    PruneEval ev;
    ev.sample_index = i;
    ev.rates = strategies[i].rates;
    PrunedNetwork net = slice_weights(parent_state, parent_spec, strategies[i], cfg);
    ev.params = net.spec.param_count;
    ev.feasible = pc.max_params <= 0 || check_constraint(net.spec, pc.max_params);
    if (ev.feasible) {
      ev.acc_pre_calib = finite_accuracy(net.spec, net.state, val);
      recalibrate_bn(net.spec, net.state, train, pc.calib, derive_seed(seed, "calib", i));
      ev.acc_post_calib = finite_accuracy(net.spec, net.state, val);
      feasible.push_back({std::move(net.spec), std::move(net.state), ev.acc_post_calib, strategies[i], i});
    }
    sel.evals.push_back(std::move(ev));
  }
  sel.all_infeasible = feasible.empty();
  std::stable_sort(feasible.begin(), feasible.end(), [](const PrunedCandidate& a, const PrunedCandidate& b) {
    if (a.inference_accuracy != b.inference_accuracy) return a.inference_accuracy > b.inference_accuracy;
    if (a.spec.param_count != b.spec.param_count) return a.spec.param_count < b.spec.param_count;
    return a.sample_index < b.sample_index;
  });
  if (feasible.size() > static_cast<std::size_t>(pc.num_keep)) feasible.resize(static_cast<std::size_t>(pc.num_keep));
  for (const auto& k : feasible) sel.evals[k.sample_index].kept = true;
  sel.kept = std::move(feasible);
  return sel;
}

PruneSelection propose_and_select(const NetworkSpec& parent_spec, const ModelState& parent_state,
                                  const SearchSpaceConfig& cfg, const LabeledData& train,
                                  const LabeledData& val, const PruneConfig& pc, std::uint64_t seed) {
  if (pc.num_samples < 1) throw RangeError("prune_samples must be >= 1");
  const std::size_t layers = parent_spec.prunable_layers().size();
  std::vector<PruningStrategy> strategies(static_cast<std::size_t>(pc.num_samples));
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    std::mt19937_64 rng(derive_seed(seed, "strategy", i));
    std::uniform_real_distribution<double> rate(cfg.prune_range.lo, cfg.prune_range.hi);
    strategies[i].rates.resize(layers);
    for (auto& r : strategies[i].rates) r = rate(rng);
  }
  return evaluate_strategies(parent_spec, parent_state, cfg, train, val, pc, strategies, seed);
}

double finetune_pruned(PrunedCandidate& p, const LabeledData& train_set, const LabeledData& val, TrainConfig cfg) {
  cfg.batch_size = p.spec.source_genome.batch_size_int();
  cfg.lr_init = p.spec.source_genome.learning_rate;
  const FitResult r = train_and_evaluate(p.spec, p.state, train_set, val, cfg);
  p.diverged = r.diverged;
  return r.accuracy;
}

}  // namespace jointnas
