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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "jointnas/config.hpp"
#include "jointnas/dataset.hpp"
#include "jointnas/report.hpp"
#include "jointnas/search.hpp"

namespace jointnas {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("jointnas_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

RunConfig tiny_run() {
  return parse_config(R"(
base_channels = 2,2,4,4,4
arch_base_channels = 2,2,4,4,4
base_fc_width = 8
max_layers_per_stage = 2
max_params = 0
pop_init = 3
pop_rest = 2
generations = 2
epochs_gen1 = 1
epochs_rest = 1
finetune_epochs = 1
prune_samples = 2
prune_keep = 1
bn_calib_batches = 2
bn_calib_batch_size = 8
predictor_hidden = 8
predictor_epochs = 5
predictor_folds = 2
synth_classes = 3
synth_per_class = 8
)");
}

TEST(ConfigTest, Errors) {
  EXPECT_THROW(parse_config("pop_init = 3\nnot_a_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("pop_init = 3\npop_init = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("pop_init = three\n"), ConfigError);
  EXPECT_THROW(parse_config("pop_init\n"), ConfigError);
  EXPECT_THROW(parse_config("search_space_mode = everything\n"), ConfigError);
  EXPECT_THROW(parse_config("pop_init = 2\npop_rest = 3\n"), ConfigError);
  try {
    parse_config("# header\n\nbogus = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
}

TEST(ConfigTest, TextRoundTrip) {
  const RunConfig c = tiny_run();
  EXPECT_EQ(to_text(parse_config(to_text(c))), to_text(c));
  EXPECT_EQ(to_text(parse_config("")), to_text(RunConfig{}));
  EXPECT_EQ(c.evolve.pop_init, 3);
  EXPECT_EQ(c.space.base_channels, (std::vector<int>{2, 2, 4, 4, 4}));
  EXPECT_EQ(parse_config("search_space_mode = arch # comment\n").mode, SearchMode::kArch);
}

TEST(ConfigTest, ModesFreezeGenes) {
  RunConfig c;
  c.mode = SearchMode::kArch;
  SearchSpaceConfig s = c.effective_space();
  EXPECT_FALSE(s.search_pruning);
  EXPECT_FALSE(s.search_hyper);
  EXPECT_EQ(s.base_channels, c.arch_base_channels);
  c.mode = SearchMode::kArchPruning;
  s = c.effective_space();
  EXPECT_TRUE(s.search_pruning);
  EXPECT_FALSE(s.search_hyper);
  c.mode = SearchMode::kArchPruningHyp;
  s = c.effective_space();
  EXPECT_TRUE(s.search_pruning && s.search_hyper);
}

TEST(DatasetTest, RoundTrip) {
  const Dataset ds = generate_synthetic(3, 4, 32, 1);
  EXPECT_EQ(parse_dataset(serialize_dataset(ds)), ds);
  const fs::path dir = scratch("dataset");
  write_dataset(dir / "d.bin", ds);
  EXPECT_EQ(load_dataset(dir / "d.bin"), ds);
}

TEST(DatasetTest, ParseErrors) {
  const Dataset ds = generate_synthetic(3, 2, 32, 1);
  std::vector<std::uint8_t> bytes = serialize_dataset(ds);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_dataset(bad), ParseError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(parse_dataset(bad), ParseError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(parse_dataset(bad), ParseError);
  bad = bytes;
  bad.back() = 200;
  EXPECT_THROW(parse_dataset(bad), ParseError);
  Dataset empty = ds;
  empty.n = 0;
  empty.pixels.clear();
  empty.labels.clear();
  try {
    parse_dataset(serialize_dataset(empty));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("empty dataset"), std::string::npos);
  }
}

TEST(DatasetTest, SyntheticShapeAndDeterminism) {
  const Dataset a = generate_synthetic(10, 5, 32, 3);
  EXPECT_EQ(a, generate_synthetic(10, 5, 32, 3));
  EXPECT_NE(a, generate_synthetic(10, 5, 32, 4));
  EXPECT_EQ(a.n, 50);
  EXPECT_EQ(a.channels, 3);
  EXPECT_EQ(a.height, 32);
  EXPECT_EQ(a.class_count, 10);
  std::vector<int> counts(10, 0);
  for (auto l : a.labels) ++counts[l];
  EXPECT_EQ(counts, std::vector<int>(10, 5));
  EXPECT_THROW(generate_synthetic(10, 5, 16, 3), RangeError);
  EXPECT_THROW(generate_synthetic(1, 5, 32, 3), RangeError);
}

TEST(DatasetTest, SplitAndNormalization) {
  const Split s = split_indices(100, 0.2, 5);
  EXPECT_EQ(s.val.size(), 20u);
  EXPECT_EQ(s.train.size(), 80u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(split_indices(10, 0.0, 1), RangeError);

  const Dataset ds = generate_synthetic(4, 10, 32, 2);
  std::vector<std::size_t> idx(40);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Normalization norm = compute_normalization(ds, idx);
  const LabeledData d = to_labeled(ds, idx, norm);
  const std::size_t plane = 32 * 32;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = d.images.data[(i * 3 + c) * plane + p];
        sum += v;
        sq += v * v;
      }
    }
    const double n = 40.0 * plane;
    EXPECT_NEAR(sum / n, 0.0, 1e-4);
    EXPECT_NEAR(sq / n, 1.0, 1e-3);
  }
}

// Multinomial logistic regression on raw pixels.
double linear_accuracy(const LabeledData& train, const LabeledData& val, int classes) {
  const std::size_t dim = train.images.numel() / train.size();
  std::vector<double> w(classes * dim, 0.0), b(classes, 0.0);
  auto scores = [&](const LabeledData& d, std::size_t i) {
    std::vector<double> s(b);
    const float* x = d.images.ptr() + i * dim;
    for (int k = 0; k < classes; ++k) {
      for (std::size_t j = 0; j < dim; ++j) s[k] += w[k * dim + j] * x[j];
    }
    return s;
  };
  for (int epoch = 0; epoch < 30; ++epoch) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto s = scores(train, i);
      const double m = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& v : s) z += (v = std::exp(v - m));
      const float* x = train.images.ptr() + i * dim;
      for (int k = 0; k < classes; ++k) {
        const double g = s[k] / z - (k == train.labels[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < dim; ++j) w[k * dim + j] -= 1e-3 * g * x[j];
        b[k] -= 1e-3 * g;
      }
    }
  }
  int hit = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto s = scores(val, i);
    hit += static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()) == val.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(val.size());
}

TEST(DatasetTest, LinearModelStaysNearChance) {
  RunConfig c;
  const PreparedData d = prepare_data(c, 1);
  EXPECT_EQ(d.num_classes, 10);
  // The model has capacity to memorize the training split, yet does not generalize.
  EXPECT_GT(linear_accuracy(d.train, d.train, d.num_classes), 0.9);
  EXPECT_LE(linear_accuracy(d.train, d.val, d.num_classes), 0.40);
}

TEST(SearchTest, TinyRunIsDeterministicAndResumable) {
  const RunConfig cfg = tiny_run();
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  const FinalReport ra = run_search(cfg, {a, 3, 1, false, 0});
  const FinalReport rb = run_search(cfg, {b, 3, 2, false, 0});
  ASSERT_TRUE(ra.complete);
  std::string why;
  EXPECT_TRUE(same_run_log(a / "run.jsonl", b / "run.jsonl", &why)) << why;
  EXPECT_EQ(ra.encoded, rb.encoded);
  EXPECT_EQ(slurp(a / "best.txt"), ra.spec_text);

  const FinalReport partial = run_search(cfg, {c, 3, 1, false, 1});
  EXPECT_FALSE(partial.complete);
  EXPECT_TRUE(fs::exists(c / "checkpoints"));
  const FinalReport resumed = run_search(cfg, {c, 3, 1, true, 0});
  EXPECT_TRUE(resumed.complete);
  EXPECT_TRUE(same_run_log(a / "run.jsonl", c / "run.jsonl", &why)) << why;
  EXPECT_EQ(resumed.accuracy, ra.accuracy);

  const RunLog log = read_run_log(a / "run.jsonl");
  EXPECT_EQ(log.skipped, 0);
  int gens = 0;
  for (const auto& e : log.events) gens += e.at("type") == "generation";
  EXPECT_EQ(gens, 2);

  RunConfig other = cfg;
  other.evolve.pop_init = 4;
  EXPECT_THROW(run_search(other, {c, 3, 1, true, 0}), ConfigError);
}

TEST(SearchTest, ArchModeKeepsFullWidth) {
  RunConfig cfg = tiny_run();
  cfg.mode = SearchMode::kArch;
  const fs::path d = scratch("arch");
  run_search(cfg, {d, 1, 1, false, 0});
  for (const auto& e : read_run_log(d / "run.jsonl").events) {
    EXPECT_NE(e.at("type"), "prune_eval");
    if (e.at("type") == "candidate") {
      EXPECT_NE(e.at("op"), "pruning");
    }
    if (e.at("type") == "final") {
      for (double r : e.at("prune_rates").get<std::vector<double>>()) EXPECT_EQ(r, 1.0);
    }
  }
}

TEST(ReportTest, RowsAndComparison) {
  RunConfig cfg = tiny_run();
  cfg.evolve.generations = 1;
  const fs::path s = scratch("rep_search"), r = scratch("rep_random"), out = scratch("rep_out");
  const FinalReport fs_ = run_search(cfg, {s, 2, 1, false, 0});
  const FinalReport fr = run_random_baseline(cfg, s, {r, 0, 1, false, 0});
  EXPECT_EQ(fr.budget_epochs, fs_.budget_epochs);

  const RunSummary sum = summarize_run(s);
  ASSERT_EQ(sum.generations.size(), 1u);
  EXPECT_EQ(sum.kind, "search");
  EXPECT_TRUE(sum.finished);
  EXPECT_EQ(sum.best_acc, fs_.accuracy);

  const auto runs = write_report({s, r}, out);
  ASSERT_EQ(runs.size(), 2u);
  std::istringstream csv(slurp(out / "comparison.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3);
  std::istringstream gen_csv(slurp(out / (runs[0].name + "_generations.csv")));
  rows = 0;
  while (std::getline(gen_csv, line)) ++rows;
  EXPECT_EQ(rows, 2);

  RunConfig longer = cfg;
  longer.evolve.generations = 2;
  const fs::path s2 = scratch("rep_search2");
  run_search(longer, {s2, 2, 1, false, 0});
  EXPECT_THROW(write_report({s2, r}, scratch("rep_out2")), Error);
}

}  // namespace
}  // namespace jointnas
