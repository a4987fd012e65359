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

#include "jointnas/evolve.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_set>

namespace jointnas {

const char* origin_name(Origin op) {
  switch (op) {
    case Origin::kInit: return "init";
    case Origin::kCrossover: return "crossover";
    case Origin::kMutation: return "mutation";
    case Origin::kPruning: return "pruning";
  }
  return "?";
}

Origin parse_origin(const std::string& name) {
  for (Origin op : {Origin::kInit, Origin::kCrossover, Origin::kMutation, Origin::kPruning}) {
    if (name == origin_name(op)) return op;
  }
  throw ParseError("unknown candidate origin '" + name + "'");
}

void EvolveConfig::validate() const {
  if (pop_init < 1 || pop_rest < 2) throw ConfigError("pop_init must be >= 1 and pop_rest >= 2");
  if (pop_rest > pop_init) throw ConfigError("pop_rest must not exceed pop_init");
  if (generations < 1) throw ConfigError("generations must be >= 1");
  for (double p : {p_intra, p_inter, p_mutate}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probabilities must lie in [0, 1]");
  }
  if (epochs_gen1 < 1 || epochs_rest < 1 || finetune_epochs < 1) throw ConfigError("epoch counts must be >= 1");
  if (prune_samples < 1 || prune_keep < 1 || prune_keep > prune_samples) {
    throw ConfigError("need 1 <= prune_keep <= prune_samples");
  }
  if (gate_retries < 0) throw ConfigError("gate_retries must be >= 0");
}

namespace {

bool better(const Candidate* a, const Candidate* b) {
  const double aa = a->accuracy.value_or(-1.0);
  const double bb = b->accuracy.value_or(-1.0);
  if (aa != bb) return aa > bb;
  return a->id < b->id;
}

// Copies the overlapping leading block of src into dst (same rank).
void copy_overlap(Tensor& dst, const Tensor& src) {
  const std::size_t rank = dst.shape.size();
  if (rank == 0 || src.shape.size() != rank) return;
  std::vector<int> box(rank);
  for (std::size_t d = 0; d < rank; ++d) box[d] = std::min(dst.shape[d], src.shape[d]);
  if (std::any_of(box.begin(), box.end(), [](int v) { return v == 0; })) return;
  std::vector<std::size_t> ds(rank, 1), ss(rank, 1);
  for (std::size_t d = rank - 1; d > 0; --d) {
    ds[d - 1] = ds[d] * static_cast<std::size_t>(dst.shape[d]);
    ss[d - 1] = ss[d] * static_cast<std::size_t>(src.shape[d]);
  }
  const auto inner = static_cast<std::size_t>(box[rank - 1]);
  std::size_t rows = 1;
  for (std::size_t d = 0; d + 1 < rank; ++d) rows *= static_cast<std::size_t>(box[d]);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t rem = r, doff = 0, soff = 0;
    for (std::size_t d = rank - 1; d-- > 0;) {
      const std::size_t i = rem % static_cast<std::size_t>(box[d]);
      rem /= static_cast<std::size_t>(box[d]);
      doff += i * ds[d];
      soff += i * ss[d];
    }
    std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(soff), inner,
                dst.data.begin() + static_cast<std::ptrdiff_t>(doff));
  }
}

std::vector<std::string> layer_genes(const LayerSpec& l, const SearchSpaceConfig& cfg) {
  switch (l.role) {
    case LayerRole::kConv:
      return {"kernel." + std::to_string(l.stage_index) + "." + std::to_string(l.slot_index),
              "prune." + std::to_string(cfg.conv_prune_slot(l.stage_index, l.slot_index))};
    case LayerRole::kFc:
      if (l.slot_index < 0) return {"fc_count"};
      return {"fc_count", "prune." + std::to_string(cfg.fc_prune_slot(l.slot_index))};
    case LayerRole::kShortcutIdentity:
    case LayerRole::kShortcutConv1x1:
      return {"shortcut." + std::to_string(cfg.shortcut_index(l.from_stage, l.stage_index))};
    case LayerRole::kMaxPool:
      return {};
  }
  return {};
}

std::string canonical(const EncodedGenome& e, const SearchSpaceConfig& cfg) {
  return encode(decode(e, cfg), cfg, e.layout).to_string();
}

}  // namespace

std::vector<const Candidate*> select_parents(const std::vector<const Candidate*>& evaluated, std::size_t n) {
  if (evaluated.empty()) throw RangeError("no evaluated candidates to select parents from");
  std::vector<const Candidate*> unpruned, pruned;
  for (const Candidate* c : evaluated) {
    if (!c->accuracy) throw RangeError("candidate " + std::to_string(c->id) + " has no accuracy");
    (c->is_pruned() ? pruned : unpruned).push_back(c);
  }
  std::sort(unpruned.begin(), unpruned.end(), better);
  std::sort(pruned.begin(), pruned.end(), better);
  n = std::min(n, evaluated.size());
  const std::size_t want_unpruned = (n + 2) / 3;
  std::size_t take_u = std::min(want_unpruned, unpruned.size());
  std::size_t take_p = std::min(n - take_u, pruned.size());
  take_u = std::min(n - take_p, unpruned.size());
  std::vector<const Candidate*> out(unpruned.begin(), unpruned.begin() + static_cast<std::ptrdiff_t>(take_u));
  out.insert(out.end(), pruned.begin(), pruned.begin() + static_cast<std::ptrdiff_t>(take_p));
  return out;
}

std::vector<ChildPlan> group_and_cross(const std::vector<const Candidate*>& parents, double p_intra, double p_inter,
                                       double p_mutate, std::uint64_t seed) {
  std::vector<const Candidate*> sorted = parents;
  std::sort(sorted.begin(), sorted.end(), better);
  const std::size_t n = sorted.size();
  const std::size_t base = n / 3, rem = n % 3;
  const std::size_t a_end = base + (rem > 0 ? 1 : 0);
  const std::size_t b_end = a_end + base + (rem > 1 ? 1 : 0);
  auto group = [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> g(hi - lo);
    std::iota(g.begin(), g.end(), lo);
    return g;
  };
  const auto ga = group(0, a_end), gb = group(a_end, b_end), gc = group(b_end, n);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<bool> used(n, false);
  std::vector<ChildPlan> out;

  auto intra = [](const std::vector<std::size_t>& g) {
    std::vector<std::pair<std::size_t, std::size_t>> p;
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t j = i + 1; j < g.size(); ++j) p.emplace_back(g[i], g[j]);
    }
    return p;
  };
  auto inter = [](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    std::vector<std::pair<std::size_t, std::size_t>> p;
    for (auto i : x) {
      for (auto j : y) p.emplace_back(i, j);
    }
    return p;
  };
  auto run = [&](std::vector<std::pair<std::size_t, std::size_t>> pairs, double prob) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (const auto& [i, j] : pairs) {
      if (used[i] || used[j]) continue;
      if (!(coin(rng) < prob)) continue;
      used[i] = used[j] = true;
      const Candidate* a = sorted[i];
      const Candidate* b = sorted[j];
      const CrossoverResult r = crossover(a->encoded, b->encoded, rng());
      out.push_back({r.first, Origin::kCrossover, {a->id, b->id}, r.cut_lo, r.cut_hi});
      out.push_back({r.second, Origin::kCrossover, {b->id, a->id}, r.cut_lo, r.cut_hi});
    }
  };
  if (n >= 3) {
    run(intra(ga), p_intra);
    run(intra(gb), p_intra);
    run(inter(ga, gb), p_inter);
    run(inter(ga, gc), p_inter);
    run(inter(gb, gc), p_inter);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (used[i]) continue;
    out.push_back({mutate(sorted[i]->encoded, p_mutate, rng()), Origin::kMutation, {sorted[i]->id}, 0, 0});
  }
  return out;
}

ModelState inherit_weights(const NetworkSpec& child, const ChildPlan& plan,
                           const std::vector<const Candidate*>& donors, const SearchSpaceConfig& cfg,
                           std::uint64_t seed) {
  if (donors.empty()) throw RangeError("inherit_weights needs at least one donor");
  const GenomeLayout layout = make_layout(cfg);
  const Candidate* fallback = donors.size() == 1 ? donors[0] : (better(donors[0], donors[1]) ? donors[0] : donors[1]);

  auto donor_for = [&](const LayerSpec& l) -> const Candidate* {
    if (donors.size() == 1 || plan.op != Origin::kCrossover) return donors[0];
    int inside = 0, outside = 0;
    for (const auto& name : layer_genes(l, cfg)) {
      const GeneSlot& g = layout.gene(name);
      for (std::size_t b = g.offset; b < g.offset + g.width; ++b) {
        ((b >= plan.cut_lo && b < plan.cut_hi) ? inside : outside)++;
      }
    }
    if (inside == 0) return donors[0];
    if (outside == 0) return donors[1];
    return fallback;
  };

  ModelState st;
  for (const LayerSpec& l : child.layers) {
    init_layer(l, st, seed);
    if (l.role == LayerRole::kMaxPool || l.role == LayerRole::kShortcutIdentity) continue;
    const Candidate* d = donor_for(l);
    const std::string key = l.key();
    auto it = std::find_if(d->spec.layers.begin(), d->spec.layers.end(),
                           [&](const LayerSpec& o) { return o.key() == key; });
    if (it == d->spec.layers.end() || it->role != l.role || it->kernel != l.kernel) continue;
    for (auto* group : {&st.params, &st.buffers}) {
      const auto& src_group = group == &st.params ? d->state.params : d->state.buffers;
      for (auto& [name, t] : *group) {
        if (name.compare(0, key.size() + 1, key + ".") != 0) continue;
        auto s = src_group.find(name);
        if (s != src_group.end()) copy_overlap(t, s->second);
      }
    }
  }
  return st;
}

ParallelFor make_parallel_for(int jobs) {
  if (jobs <= 1) {
    return [](std::size_t n, const std::function<void(std::size_t)>& fn) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
    };
  }
  return [jobs](std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t err_index = n;
    std::exception_ptr err;
    auto worker = [&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (i < err_index) {
            err_index = i;
            err = std::current_exception();
          }
        }
      }
    };
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < count; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  };
}

SearchState initial_state(const SearchContext& ctx, int& rejections) {
  ctx.evolve.validate();
  constexpr int kMaxTries = 10000;
  auto layout = std::make_shared<const GenomeLayout>(make_layout(ctx.space));
  SearchState st;
  rejections = 0;
  for (int i = 0; i < ctx.evolve.pop_init; ++i) {
    for (int t = 0;; ++t) {
      if (t == kMaxTries) throw Error("could not sample a genome under max_params after " + std::to_string(t) + " tries");
      Genome g = random_genome(ctx.space, derive_seed(ctx.evolve.seed, "init", static_cast<std::uint64_t>(i), "try",
                                                      static_cast<std::uint64_t>(t)));
      NetworkSpec spec = build(g, ctx.space, ctx.num_classes);
      if (ctx.max_params > 0 && !check_constraint(spec, ctx.max_params)) {
        ++rejections;
        continue;
      }
      Candidate c;
      c.id = st.next_id++;
      c.encoded = encode(g, ctx.space, layout);
      c.genome = std::move(g);
      c.spec = std::move(spec);
      c.state = init_state(c.spec, derive_seed(ctx.evolve.seed, "weights", static_cast<std::uint64_t>(c.id)));
      c.generation = 1;
      c.op = Origin::kInit;
      st.seen.push_back(canonical(c.encoded, ctx.space));
      st.members.push_back(std::move(c));
      break;
    }
  }
  return st;
}

GenerationReport run_generation(SearchState& st, const SearchContext& ctx, const EvolveObserver& obs,
                                int init_rejections) {
  const EvolveConfig& ec = ctx.evolve;
  const int gen = st.next_gen;
  const std::uint64_t seed = ec.seed;
  const auto ugen = static_cast<std::uint64_t>(gen);
  GenerationReport rep;
  rep.gen = gen;
  rep.init_rejections = init_rejections;
  auto layout = std::make_shared<const GenomeLayout>(make_layout(ctx.space));

  // (1) Train members that have no accuracy yet.
  std::vector<std::size_t> fresh;
  for (std::size_t i = 0; i < st.members.size(); ++i) {
    if (!st.members[i].accuracy) fresh.push_back(i);
  }
  const int epochs = gen == 1 ? ec.epochs_gen1 : ec.epochs_rest;
  ctx.parallel(fresh.size(), [&](std::size_t k) {
    Candidate& c = st.members[fresh[k]];
    TrainConfig tc = ctx.train_base;
    tc.epochs = epochs;
    tc.batch_size = c.genome.batch_size_int();
    tc.lr_init = c.genome.learning_rate;
    tc.seed = derive_seed(seed, "train", static_cast<std::uint64_t>(c.id));
    const FitResult r = train_and_evaluate(c.spec, c.state, *ctx.train, *ctx.val, tc);
    c.epochs_trained += epochs;
    c.accuracy = r.accuracy;
    c.diverged = r.diverged;
  });
  rep.epochs_used += static_cast<std::int64_t>(fresh.size()) * epochs;
  for (std::size_t i : fresh) {
    if (obs.on_candidate) obs.on_candidate(st.members[i]);
  }

  // (2) Pruned variants of every freshly trained unpruned member.
  std::vector<Candidate> pruned;
  if (ctx.space.search_pruning) {
    std::vector<std::size_t> parents;
    for (std::size_t i : fresh) {
      if (!st.members[i].is_pruned() && !st.members[i].diverged) parents.push_back(i);
    }
    std::vector<PruneSelection> sels(parents.size());
    std::vector<std::vector<double>> tuned(parents.size());
    PruneConfig pc = ctx.prune;
    pc.num_samples = ec.prune_samples;
    pc.num_keep = ec.prune_keep;
    pc.max_params = ctx.max_params;
    ctx.parallel(parents.size(), [&](std::size_t k) {
      const Candidate& p = st.members[parents[k]];
      const std::uint64_t ps = derive_seed(seed, "prune", static_cast<std::uint64_t>(p.id));
      sels[k] = propose_and_select(p.spec, p.state, ctx.space, *ctx.train, *ctx.val, pc, ps);
      for (auto& kept : sels[k].kept) {
        TrainConfig tc = ctx.train_base;
        tc.epochs = ec.finetune_epochs;
        tc.seed = derive_seed(ps, "finetune", kept.sample_index);
        tuned[k].push_back(finetune_pruned(kept, *ctx.train, *ctx.val, tc));
      }
    });
    for (std::size_t k = 0; k < parents.size(); ++k) {
      const Candidate& p = st.members[parents[k]];
      for (const auto& ev : sels[k].evals) {
        if (obs.on_prune_eval) obs.on_prune_eval(gen, p.id, ev);
      }
      for (std::size_t j = 0; j < sels[k].kept.size(); ++j) {
        PrunedCandidate& pk = sels[k].kept[j];
        Candidate c;
        c.id = st.next_id++;
        c.genome = pk.spec.source_genome;
        c.encoded = encode(c.genome, ctx.space, layout);
        c.spec = std::move(pk.spec);
        c.state = std::move(pk.state);
        c.accuracy = tuned[k][j];
        c.diverged = pk.diverged;
        c.generation = gen;
        c.parents = {p.id};
        c.pruned_from = p.id;
        c.op = Origin::kPruning;
        c.epochs_trained = p.epochs_trained + ec.finetune_epochs;
        rep.epochs_used += ec.finetune_epochs;
        st.seen.push_back(canonical(c.encoded, ctx.space));
        if (obs.on_candidate) obs.on_candidate(c);
        pruned.push_back(std::move(c));
      }
    }
  }
  rep.pruned = static_cast<int>(pruned.size());
  rep.cumulative_epochs = st.cumulative_epochs + rep.epochs_used;
  st.cumulative_epochs = rep.cumulative_epochs;

  std::vector<const Candidate*> pool;
  for (const auto& c : st.members) pool.push_back(&c);
  for (const auto& c : pruned) pool.push_back(&c);

  // (3) Predictor on every pair seen so far.
  PredictorReport pr;
  pr.gen = gen;
  {
    std::vector<double> actual;
    for (std::size_t i : fresh) {
      st.pairs.push_back({st.members[i].encoded.bits, *st.members[i].accuracy});
      if (!st.members[i].is_pruned() && gen > 1) actual.push_back(*st.members[i].accuracy);
    }
    for (const auto& c : pruned) st.pairs.push_back({c.encoded.bits, *c.accuracy});
    if (st.child_predictions.size() >= 2 && actual.size() == st.child_predictions.size()) {
      pr.next_gen_ktau = kendall_tau(st.child_predictions, actual);
    }
  }
  PredictorModel model;
  pr.pairs_count = st.pairs.size();
  if (st.pairs.size() >= 2) {
    model = fit(st.pairs, ctx.predictor, derive_seed(seed, "predictor", ugen));
    pr.train_rmse = model.train_rmse();
    const auto folds = static_cast<std::size_t>(ctx.predictor.folds);
    if (folds >= 2 && st.pairs.size() / folds >= 2) {
      pr.cv_ktau = crossval_ktau(st.pairs, ctx.predictor, derive_seed(seed, "crossval", ugen));
    }
  }
  if (obs.on_predictor) obs.on_predictor(pr);

  // Generation statistics.
  const Candidate* best = *std::min_element(pool.begin(), pool.end(),
                                            [](const Candidate* a, const Candidate* b) { return better(a, b); });
  if (!st.best_set || *best->accuracy > st.best_accuracy) {
    st.best_set = true;
    st.best_accuracy = *best->accuracy;
    st.best_id = best->id;
    st.best_genome = best->genome;
    st.best_spec = best->spec;
  }
  double acc_sum = 0.0, par_sum = 0.0, par_all = 0.0;
  for (const auto& c : st.members) {
    acc_sum += *c.accuracy;
    par_sum += static_cast<double>(c.spec.param_count);
    rep.members.push_back(c.id);
  }
  for (const Candidate* c : pool) par_all += static_cast<double>(c->spec.param_count);
  rep.mean_acc = acc_sum / static_cast<double>(st.members.size());
  rep.max_acc = *best->accuracy;
  rep.best_so_far = st.best_accuracy;
  rep.best_id = st.best_id;
  rep.mean_params = par_sum / static_cast<double>(st.members.size());
  rep.mean_params_all = par_all / static_cast<double>(pool.size());

  if (gen >= ec.generations) {
    st.child_predictions.clear();
    st.next_gen = gen + 1;
    if (obs.on_generation) obs.on_generation(rep);
    return rep;
  }

  // (4) Parents, crossover and mutation.
  const auto parents = select_parents(pool, static_cast<std::size_t>(ec.parent_count()));
  std::vector<ChildPlan> plans =
      group_and_cross(parents, ec.p_intra, ec.p_inter, ec.p_mutate, derive_seed(seed, "breed", ugen));
  rep.children_planned = static_cast<int>(plans.size());

  // (5) Constraint gate and deduplication.
  std::unordered_set<std::string> seen(st.seen.begin(), st.seen.end());
  std::vector<ChildPlan> gated;
  std::vector<Genome> genomes;
  std::vector<NetworkSpec> specs;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    ChildPlan plan = plans[i];
    bool deduped = false;
    bool ok = false;
    int attempt = 0;
    while (true) {
      Genome g = decode(plan.encoded, ctx.space);
      NetworkSpec spec = build(g, ctx.space, ctx.num_classes);
      if (ctx.max_params > 0 && !check_constraint(spec, ctx.max_params)) {
        ++rep.gate_rejections;
        if (attempt++ >= ec.gate_retries) break;
        plan.encoded = mutate(plan.encoded, ec.p_mutate,
                              derive_seed(seed, "regate", ugen, "child", i, "try", static_cast<std::uint64_t>(attempt)));
        continue;
      }
      const std::string key = encode(g, ctx.space, layout).to_string();
      if (!deduped && seen.count(key)) {
        deduped = true;
        ++rep.duplicates;
        plan.encoded = mutate(plan.encoded, ec.p_mutate, derive_seed(seed, "dedupe", ugen, "child", i));
        continue;
      }
      seen.insert(key);
      st.seen.push_back(key);
      plan.encoded = encode(g, ctx.space, layout);
      genomes.push_back(std::move(g));
      specs.push_back(std::move(spec));
      gated.push_back(std::move(plan));
      ok = true;
      break;
    }
    if (!ok) ++rep.children_dropped;
  }

  // (6) Predictor filter.
  std::vector<std::size_t> keep;
  std::vector<double> scores;
  if (model.fitted()) {
    for (const auto& p : gated) scores.push_back(model.predict_one(p.encoded.bits));
    keep = top_half(scores);
  } else {
    keep.resize(gated.size());
    std::iota(keep.begin(), keep.end(), std::size_t{0});
  }
  rep.children_kept = static_cast<int>(keep.size());

  // (7) Warm-started next population.
  std::vector<Candidate> next;
  if (ec.elitism) next.push_back(*best);
  std::vector<Candidate> children(keep.size());
  st.child_predictions.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    Candidate& c = children[k];
    const std::size_t j = keep[k];
    c.id = st.next_id++;
    c.genome = genomes[j];
    c.encoded = gated[j].encoded;
    c.spec = specs[j];
    c.generation = gen + 1;
    c.parents = gated[j].parents;
    c.op = gated[j].op;
    if (model.fitted()) st.child_predictions.push_back(scores[j]);
  }
  ctx.parallel(children.size(), [&](std::size_t k) {
    Candidate& c = children[k];
    std::vector<const Candidate*> donors;
    for (std::int64_t pid : c.parents) {
      auto it = std::find_if(pool.begin(), pool.end(), [&](const Candidate* p) { return p->id == pid; });
      donors.push_back(*it);
    }
    c.state = inherit_weights(c.spec, gated[keep[k]], donors, ctx.space,
                              derive_seed(seed, "weights", static_cast<std::uint64_t>(c.id)));
    c.epochs_trained = 0;
  });
  for (auto& c : children) next.push_back(std::move(c));
  if (next.empty()) throw Error("population extinct at generation " + std::to_string(gen));
  st.members = std::move(next);
  st.next_gen = gen + 1;
  if (obs.on_generation) obs.on_generation(rep);
  return rep;
}

}  // namespace jointnas
