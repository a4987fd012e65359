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

#include "jointnas/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

namespace jointnas {

const char* mode_name(SearchMode m) {
  switch (m) {
    case SearchMode::kArch: return "arch";
    case SearchMode::kArchPruning: return "arch+pruning";
    case SearchMode::kArchPruningHyp: return "arch+pruning+hyp";
  }
  return "?";
}

SearchMode parse_mode(const std::string& s) {
  for (SearchMode m : {SearchMode::kArch, SearchMode::kArchPruning, SearchMode::kArchPruningHyp}) {
    if (s == mode_name(m)) return m;
  }
  throw ConfigError("unknown search_space_mode '" + s + "' (expected arch, arch+pruning or arch+pruning+hyp)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_int(const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(trim(item)));
  if (out.empty()) throw ConfigError("expected a comma-separated list");
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define JN_INT(name, field)                                                              \
  Key {                                                                                  \
    name, [](RunConfig& c, const std::string& v) { c.field = parse_int<decltype(c.field)>(v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                       \
  }
#define JN_DOUBLE(name, field)                                                  \
  Key {                                                                         \
    name, [](RunConfig& c, const std::string& v) { c.field = parse_double(v); }, \
        [](const RunConfig& c) { return fmt_double(c.field); }                  \
  }
#define JN_LIST(name, field)                                                      \
  Key {                                                                           \
    name, [](RunConfig& c, const std::string& v) { c.field = parse_int_list(v); }, \
        [](const RunConfig& c) { return fmt_list(c.field); }                      \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"search_space_mode", [](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); },
       [](const RunConfig& c) { return std::string(mode_name(c.mode)); }},
      JN_INT("num_stages", space.num_stages),
      JN_INT("max_layers_per_stage", space.max_layers_per_stage),
      JN_LIST("kernel_choices", space.kernel_choices),
      JN_LIST("fc_choices", space.fc_choices),
      JN_DOUBLE("prune_min", space.prune_range.lo),
      JN_DOUBLE("prune_max", space.prune_range.hi),
      JN_DOUBLE("batch_min", space.batch_range.lo),
      JN_DOUBLE("batch_max", space.batch_range.hi),
      JN_DOUBLE("lr_min", space.lr_range.lo),
      JN_DOUBLE("lr_max", space.lr_range.hi),
      JN_INT("m_bits_continuous", space.m_bits_continuous),
      JN_LIST("base_channels", space.base_channels),
      JN_LIST("arch_base_channels", arch_base_channels),
      JN_INT("base_fc_width", space.base_fc_width),
      JN_INT("max_params", max_params),
      JN_INT("pop_init", evolve.pop_init),
      JN_INT("pop_rest", evolve.pop_rest),
      JN_INT("generations", evolve.generations),
      JN_DOUBLE("p_intra", evolve.p_intra),
      JN_DOUBLE("p_inter", evolve.p_inter),
      JN_DOUBLE("p_mutate", evolve.p_mutate),
      JN_INT("epochs_gen1", evolve.epochs_gen1),
      JN_INT("epochs_rest", evolve.epochs_rest),
      JN_INT("finetune_epochs", evolve.finetune_epochs),
      JN_INT("prune_samples", evolve.prune_samples),
      JN_INT("prune_keep", evolve.prune_keep),
      JN_INT("gate_retries", evolve.gate_retries),
      {"elitism", [](RunConfig& c, const std::string& v) { c.evolve.elitism = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.evolve.elitism ? "true" : "false"); }},
      JN_INT("bn_calib_batches", calib.num_batches),
      JN_INT("bn_calib_batch_size", calib.batch_size),
      JN_DOUBLE("momentum", train.momentum),
      JN_DOUBLE("weight_decay", train.weight_decay),
      JN_INT("predictor_hidden", predictor.hidden),
      JN_INT("predictor_epochs", predictor.epochs),
      JN_DOUBLE("predictor_lr", predictor.lr),
      JN_INT("predictor_batch", predictor.batch_size),
      JN_INT("predictor_folds", predictor.folds),
      JN_DOUBLE("val_fraction", val_fraction),
      {"dataset", [](RunConfig& c, const std::string& v) { c.dataset = v; },
       [](const RunConfig& c) { return c.dataset; }},
      JN_INT("synth_classes", synth_classes),
      JN_INT("synth_per_class", synth_per_class),
      JN_INT("synth_size", synth_size),
      JN_INT("synth_seed", synth_seed),
  };
  return k;
}

#undef JN_INT
#undef JN_DOUBLE
#undef JN_LIST

}  // namespace

SearchSpaceConfig RunConfig::effective_space() const {
  SearchSpaceConfig s = space;
  s.input_size = synth_size;
  s.search_pruning = mode != SearchMode::kArch;
  s.search_hyper = mode == SearchMode::kArchPruningHyp;
  if (mode == SearchMode::kArch) s.base_channels = arch_base_channels;
  return s;
}

void RunConfig::validate() const {
  try {
    effective_space().validate();
  } catch (const RangeError& e) {
    throw ConfigError(e.what());
  }
  evolve.validate();
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (max_params < 0) throw ConfigError("max_params must be >= 0 (0 disables the constraint)");
  if (calib.num_batches < 1 || calib.batch_size < 2) {
    throw ConfigError("bn_calib_batches must be >= 1 and bn_calib_batch_size >= 2");
  }
  if (predictor.hidden < 1 || predictor.epochs < 1 || predictor.batch_size < 1 || !(predictor.lr > 0.0) ||
      predictor.folds < 2) {
    throw ConfigError("invalid predictor settings");
  }
  if (train.momentum < 0.0 || train.weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be >= 0");
  if (dataset.empty() && (synth_classes < 2 || synth_per_class < 1 || synth_size < 32)) {
    throw ConfigError("synthetic data needs synth_classes >= 2, synth_per_class >= 1, synth_size >= 32");
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace jointnas
