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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jointnas/genome.hpp"
#include "jointnas/netbuild.hpp"
#include "jointnas/predictor.hpp"
#include "jointnas/pruner.hpp"
#include "jointnas/tensorkit.hpp"

namespace jointnas {

enum class Origin { kInit, kCrossover, kMutation, kPruning };

const char* origin_name(Origin op);
Origin parse_origin(const std::string& name);

struct Candidate {
  std::int64_t id = -1;
  Genome genome;
  EncodedGenome encoded;
  NetworkSpec spec;
  ModelState state;
  std::optional<double> accuracy;
  int generation = 0;
  std::vector<std::int64_t> parents;
  std::int64_t pruned_from = -1;
  Origin op = Origin::kInit;
  int epochs_trained = 0;
  bool diverged = false;  // training went non-finite; scored 0 with weights kept

  bool is_pruned() const { return pruned_from >= 0; }
};

struct EvolveConfig {
  int pop_init = 12;
  int pop_rest = 6;
  int generations = 5;
  double p_intra = 0.5;
  double p_inter = 0.3;
  double p_mutate = 0.02;
  int epochs_gen1 = 3;
  int epochs_rest = 2;
  int finetune_epochs = 2;
  int prune_samples = 20;
  int prune_keep = 3;
  int gate_retries = 10;
  bool elitism = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Parents drawn per generation; each yields one child slot, and the
  /// predictor keeps half, so pop_rest members come out (one of them the elite).
  int parent_count() const { return 2 * (elitism ? pop_rest - 1 : pop_rest); }
};

/// Top ceil(n/3) unpruned plus the best remaining pruned candidates, each pool
/// ranked by accuracy with ties going to the lower id. A short pool is topped
/// up from the other one.
std::vector<const Candidate*> select_parents(const std::vector<const Candidate*>& evaluated, std::size_t n);

struct ChildPlan {
  EncodedGenome encoded;
  Origin op = Origin::kMutation;
  std::vector<std::int64_t> parents;  // donor order: [primary, other]
  // Crossover children take bits in [cut_lo, cut_hi) from parents[1].
  std::size_t cut_lo = 0;
  std::size_t cut_hi = 0;
};

/// Splits parents (sorted by accuracy, best first) into thirds A/B/C, crosses
/// shuffled intra pairs (A, B) with p_intra and inter pairs (AB, AC, BC) with
/// p_inter, and mutates every parent left over.
std::vector<ChildPlan> group_and_cross(const std::vector<const Candidate*>& parents, double p_intra, double p_inter,
                                       double p_mutate, std::uint64_t seed);

/// Initializes a child state from its donors. Layers are matched by key; the
/// overlapping block of every tensor is copied when kernels agree, everything
/// else is freshly initialized.
ModelState inherit_weights(const NetworkSpec& child, const ChildPlan& plan,
                           const std::vector<const Candidate*>& donors, const SearchSpaceConfig& cfg,
                           std::uint64_t seed);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
using ParallelFor = std::function<void(std::size_t n, const std::function<void(std::size_t)>& fn)>;

ParallelFor make_parallel_for(int jobs);

struct GenerationReport {
  int gen = 0;
  double mean_acc = 0.0;
  double max_acc = 0.0;
  double best_so_far = 0.0;
  std::int64_t best_id = -1;
  double mean_params = 0.0;      // population members
  double mean_params_all = 0.0;  // members and their pruned variants
  std::vector<std::int64_t> members;
  int pruned = 0;
  int init_rejections = 0;
  int children_planned = 0;
  int gate_rejections = 0;
  int children_dropped = 0;
  int duplicates = 0;
  int children_kept = 0;
  std::int64_t epochs_used = 0;
  std::int64_t cumulative_epochs = 0;
};

struct PredictorReport {
  int gen = 0;
  double train_rmse = 0.0;
  std::optional<double> cv_ktau;
  std::size_t pairs_count = 0;
  // Tau between last generation's predictions for this generation's children
  // and their measured accuracy.
  std::optional<double> next_gen_ktau;
};

/// Observer for the event stream; every call happens on the driver thread in
/// a deterministic order.
struct EvolveObserver {
  std::function<void(const Candidate&)> on_candidate;
  std::function<void(int gen, std::int64_t parent_id, const PruneEval&)> on_prune_eval;
  std::function<void(const PredictorReport&)> on_predictor;
  std::function<void(const GenerationReport&)> on_generation;
};

struct SearchContext {
  SearchSpaceConfig space;
  EvolveConfig evolve;
  PruneConfig prune;
  PredictorConfig predictor;
  TrainConfig train_base;  // momentum and weight decay
  std::int64_t max_params = 0;
  int num_classes = 0;
  const LabeledData* train = nullptr;
  const LabeledData* val = nullptr;
  ParallelFor parallel;
};

/// Everything the loop carries from one generation to the next.
struct SearchState {
  int next_gen = 1;  // generation to run next
  std::int64_t next_id = 0;
  std::vector<Candidate> members;  // population of next_gen; children untrained
  std::vector<TrainingPair> pairs;
  std::vector<std::string> seen;   // encodings of every candidate so far
  std::vector<double> child_predictions;  // aligned with untrained members
  std::int64_t cumulative_epochs = 0;
  double best_so_far = 0.0;
  std::int64_t best_id = -1;
  Genome best_genome;
  NetworkSpec best_spec;
  double best_accuracy = 0.0;
  bool best_set = false;
};

/// Samples the constraint-feasible initial population.
SearchState initial_state(const SearchContext& ctx, int& rejections);

/// One generation: train, prune, fit the predictor, and (unless it is the last
/// generation) breed, gate, filter and warm-start the next population.
GenerationReport run_generation(SearchState& st, const SearchContext& ctx, const EvolveObserver& obs,
                                int init_rejections = 0);

}  // namespace jointnas
