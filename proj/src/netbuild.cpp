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

#include "jointnas/netbuild.hpp"

#include <iomanip>
#include <sstream>

namespace jointnas {

const char* role_name(LayerRole role) {
  switch (role) {
    case LayerRole::kConv: return "conv";
    case LayerRole::kFc: return "fc";
    case LayerRole::kMaxPool: return "maxpool";
    case LayerRole::kShortcutIdentity: return "shortcut_identity";
    case LayerRole::kShortcutConv1x1: return "shortcut_conv1x1";
  }
  return "?";
}

std::string LayerSpec::key() const {
  switch (role) {
    case LayerRole::kConv:
      return "s" + std::to_string(stage_index) + ".l" + std::to_string(slot_index);
    case LayerRole::kFc:
      return slot_index < 0 ? std::string("fc_out") : "fc" + std::to_string(slot_index);
    case LayerRole::kMaxPool:
      return "s" + std::to_string(stage_index) + ".pool";
    case LayerRole::kShortcutIdentity:
    case LayerRole::kShortcutConv1x1:
      return "sc" + std::to_string(from_stage) + "-" + std::to_string(stage_index);
  }
  return "?";
}

std::vector<int> NetworkSpec::stage_channels() const {
  std::vector<int> out;
  for (const auto& l : layers) {
    if (l.role != LayerRole::kConv) continue;
    if (static_cast<int>(out.size()) <= l.stage_index) out.resize(static_cast<std::size_t>(l.stage_index) + 1, 0);
    out[static_cast<std::size_t>(l.stage_index)] = l.out_channels;
  }
  return out;
}

std::vector<std::size_t> NetworkSpec::prunable_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.role == LayerRole::kConv || (l.role == LayerRole::kFc && l.slot_index >= 0)) idx.push_back(i);
  }
  return idx;
}

std::int64_t layer_param_count(const LayerSpec& l) {
  const std::int64_t in = l.in_channels;
  const std::int64_t out = l.out_channels;
  switch (l.role) {
    case LayerRole::kConv: {
      const std::int64_t k = l.kernel;
      return in * out * k * k + out + 2 * out;  // weights, bias, BN gamma/beta
    }
    case LayerRole::kFc:
    case LayerRole::kShortcutConv1x1:
      return in * out + out;
    case LayerRole::kMaxPool:
    case LayerRole::kShortcutIdentity:
      return 0;
  }
  return 0;
}

std::int64_t count_params(const std::vector<LayerSpec>& layers) {
  std::int64_t total = 0;
  for (const auto& l : layers) total += layer_param_count(l);
  return total;
}

std::vector<Shortcut> resolve_shortcuts(const Genome& g, const SearchSpaceConfig& cfg,
                                        const std::vector<int>& stage_channels) {
  std::vector<Shortcut> out;
  for (int i = 0; i < cfg.shortcut_bit_count(); ++i) {
    if (static_cast<std::size_t>(i) >= g.shortcut_bits.size() || !g.shortcut_bits[static_cast<std::size_t>(i)]) {
      continue;
    }
    const auto [from, to] = cfg.shortcut_pair(i);
    const bool adjacent = to == from + 1;
    const bool same = stage_channels.at(static_cast<std::size_t>(from)) ==
                      stage_channels.at(static_cast<std::size_t>(to));
    out.push_back({from, to, adjacent && same ? LayerRole::kShortcutIdentity : LayerRole::kShortcutConv1x1});
  }
  return out;
}

NetworkSpec build(const Genome& g, const SearchSpaceConfig& cfg, int num_classes) {
  return build(g, cfg, num_classes, nullptr);
}

NetworkSpec build(const Genome& g, const SearchSpaceConfig& cfg, int num_classes,
                  const std::vector<Shortcut>* fixed_shortcuts) {
  cfg.validate();
  validate_genome(g, cfg);
  if (num_classes < 1) throw BuildError("num_classes must be >= 1");
  const int min_size = 1 << cfg.num_stages;
  if (cfg.input_size < min_size) {
    throw BuildError("input size " + std::to_string(cfg.input_size) + " too small for " +
                     std::to_string(cfg.num_stages) + " poolings; minimum input size is " +
                     std::to_string(min_size));
  }

  NetworkSpec spec;
  spec.source_genome = g;
  spec.input_channels = cfg.input_channels;
  spec.input_size = cfg.input_size;
  spec.num_classes = num_classes;

  // Stage output channels first, so shortcut kinds can be resolved.
  std::vector<int> stage_out(static_cast<std::size_t>(cfg.num_stages), 0);
  for (int s = 0; s < cfg.num_stages; ++s) {
    for (int l = 0; l < cfg.max_layers_per_stage; ++l) {
      if (g.stage_kernels[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)] == 0) continue;
      stage_out[static_cast<std::size_t>(s)] =
          scaled_channels(cfg.base_channels[static_cast<std::size_t>(s)],
                          g.prune_rates[static_cast<std::size_t>(cfg.conv_prune_slot(s, l))]);
    }
  }
  spec.shortcuts = fixed_shortcuts ? *fixed_shortcuts : resolve_shortcuts(g, cfg, stage_out);
  for (const auto& sc : spec.shortcuts) {
    if (sc.from_stage < 0 || sc.from_stage >= sc.to_stage || sc.to_stage >= cfg.num_stages) {
      throw BuildError("invalid shortcut " + std::to_string(sc.from_stage) + "->" + std::to_string(sc.to_stage));
    }
    if (sc.kind == LayerRole::kShortcutIdentity &&
        (sc.to_stage != sc.from_stage + 1 || stage_out[static_cast<std::size_t>(sc.from_stage)] !=
                                                 stage_out[static_cast<std::size_t>(sc.to_stage)])) {
      throw BuildError("identity shortcut " + std::to_string(sc.from_stage) + "->" + std::to_string(sc.to_stage) +
                       " joins mismatched stages");
    }
  }

  std::vector<int> stage_size(static_cast<std::size_t>(cfg.num_stages) + 1);
  stage_size[0] = cfg.input_size;
  for (int s = 0; s < cfg.num_stages; ++s) stage_size[static_cast<std::size_t>(s) + 1] = stage_size[static_cast<std::size_t>(s)] / 2;

  int channels = cfg.input_channels;
  for (int s = 0; s < cfg.num_stages; ++s) {
    const int size = stage_size[static_cast<std::size_t>(s)];
    for (int l = 0; l < cfg.max_layers_per_stage; ++l) {
      const int k = g.stage_kernels[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)];
      if (k == 0) continue;
      LayerSpec conv;
      conv.role = LayerRole::kConv;
      conv.stage_index = s;
      conv.slot_index = l;
      conv.kernel = k;
      conv.prune_rate = g.prune_rates[static_cast<std::size_t>(cfg.conv_prune_slot(s, l))];
      conv.in_channels = channels;
      conv.out_channels = scaled_channels(cfg.base_channels[static_cast<std::size_t>(s)], conv.prune_rate);
      conv.in_spatial = conv.out_spatial = size;
      spec.layers.push_back(conv);
      channels = conv.out_channels;
    }
    for (const auto& sc : spec.shortcuts) {
      if (sc.to_stage != s) continue;
      LayerSpec l;
      l.role = sc.kind;
      l.stage_index = s;
      l.from_stage = sc.from_stage;
      l.in_channels = stage_out[static_cast<std::size_t>(sc.from_stage)];
      l.out_channels = stage_out[static_cast<std::size_t>(s)];
      l.kernel = sc.kind == LayerRole::kShortcutConv1x1 ? 1 : 0;
      l.stride = 1 << (s - sc.from_stage - 1);
      l.in_spatial = stage_size[static_cast<std::size_t>(sc.from_stage) + 1];
      l.out_spatial = size;
      spec.layers.push_back(l);
    }
    LayerSpec pool;
    pool.role = LayerRole::kMaxPool;
    pool.stage_index = s;
    pool.kernel = 2;
    pool.stride = 2;
    pool.in_channels = pool.out_channels = channels;
    pool.in_spatial = size;
    pool.out_spatial = stage_size[static_cast<std::size_t>(s) + 1];
    spec.layers.push_back(pool);
  }

  const int final_size = stage_size.back();
  int features = channels * final_size * final_size;
  for (int f = 0; f < g.fc_count; ++f) {
    const bool last = f == g.fc_count - 1;
    LayerSpec fc;
    fc.role = LayerRole::kFc;
    fc.slot_index = last ? -1 : f;
    fc.in_channels = features;
    fc.prune_rate = last ? 1.0 : g.prune_rates[static_cast<std::size_t>(cfg.fc_prune_slot(f))];
    fc.out_channels = last ? num_classes : scaled_channels(cfg.base_fc_width, fc.prune_rate);
    fc.in_spatial = fc.out_spatial = 1;
    spec.layers.push_back(fc);
    features = fc.out_channels;
  }
  spec.param_count = count_params(spec.layers);
  return spec;
}

bool check_constraint(const NetworkSpec& spec, std::int64_t max_params) {
  return spec.param_count < max_params;
}

std::string render(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "input " << spec.input_channels << "x" << spec.input_size << "x" << spec.input_size << "\n";
  for (const auto& l : spec.layers) {
    os << std::left << std::setw(18) << role_name(l.role) << " " << std::setw(8) << l.key();
    switch (l.role) {
      case LayerRole::kConv:
        os << " k=" << l.kernel << " " << l.in_channels << "->" << l.out_channels;
        break;
      case LayerRole::kFc:
        os << " " << l.in_channels << "->" << l.out_channels;
        break;
      case LayerRole::kMaxPool:
        os << " " << l.in_spatial << "->" << l.out_spatial;
        break;
      case LayerRole::kShortcutIdentity:
      case LayerRole::kShortcutConv1x1:
        os << " from s" << l.from_stage << " " << l.in_channels << "->" << l.out_channels
           << " stride=" << l.stride;
        break;
    }
    if (l.is_prunable()) os << " p=" << std::fixed << std::setprecision(3) << l.prune_rate;
    os.unsetf(std::ios::floatfield);
    os << "\n";
  }
  os << "params " << spec.param_count << "\n";
  return os.str();
}

}  // namespace jointnas
