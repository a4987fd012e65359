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

#include "jointnas/search.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace jointnas {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kTimeField = "ts";

// Appends one JSON object per line and flushes after every event.
class EventLog {
 public:
  EventLog(const fs::path& path, bool append) : path_(path) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw Error("cannot open " + path.string());
  }

  void write(json ev) {
    ev[kTimeField] = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    out_ << ev.dump() << '\n';
    out_.flush();
    if (!out_) throw Error("write failed on " + path_.string());
  }

  std::uint64_t offset() {
    out_.flush();
    return static_cast<std::uint64_t>(fs::file_size(path_));
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json genome_json(const Genome& g) {
  return {{"stage_kernels", g.stage_kernels}, {"fc_count", g.fc_count},   {"shortcut_bits", g.shortcut_bits},
          {"prune_rates", g.prune_rates},     {"batch_size", g.batch_size}, {"learning_rate", g.learning_rate}};
}

Genome genome_from_json(const json& j) {
  Genome g;
  g.stage_kernels = j.at("stage_kernels").get<std::vector<std::vector<int>>>();
  g.fc_count = j.at("fc_count").get<int>();
  g.shortcut_bits = j.at("shortcut_bits").get<std::vector<std::uint8_t>>();
  g.prune_rates = j.at("prune_rates").get<std::vector<double>>();
  g.batch_size = j.at("batch_size").get<double>();
  g.learning_rate = j.at("learning_rate").get<double>();
  return g;
}

json shortcuts_json(const std::vector<Shortcut>& scs) {
  json out = json::array();
  for (const auto& s : scs) out.push_back({s.from_stage, s.to_stage, role_name(s.kind)});
  return out;
}

std::vector<Shortcut> shortcuts_from_json(const json& j) {
  std::vector<Shortcut> out;
  for (const auto& s : j) {
    const std::string kind = s.at(2).get<std::string>();
    out.push_back({s.at(0).get<int>(), s.at(1).get<int>(),
                   kind == role_name(LayerRole::kShortcutIdentity) ? LayerRole::kShortcutIdentity
                                                                   : LayerRole::kShortcutConv1x1});
  }
  return out;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json candidate_event(const Candidate& c) {
  return {{"type", "candidate"},
          {"gen", c.generation},
          {"id", c.id},
          {"op", origin_name(c.op)},
          {"parents", c.parents},
          {"pruned_from", c.is_pruned() ? json(c.pruned_from) : json(nullptr)},
          {"params", c.spec.param_count},
          {"accuracy", opt_json(c.accuracy)},
          {"epochs_trained", c.epochs_trained},
          {"diverged", c.diverged},
          {"encoding", c.encoded.to_string()},
          {"stage_kernels", c.genome.stage_kernels},
          {"fc_count", c.genome.fc_count},
          {"shortcuts", shortcuts_json(c.spec.shortcuts)},
          {"prune_rates", c.genome.prune_rates},
          {"batch_size", c.genome.batch_size_int()},
          {"learning_rate", c.genome.learning_rate}};
}

json prune_event(int gen, std::int64_t parent, const PruneEval& ev) {
  return {{"type", "prune_eval"},
          {"gen", gen},
          {"parent_id", parent},
          {"sample", ev.sample_index},
          {"rates", ev.rates},
          {"params", ev.params},
          {"feasible", ev.feasible},
          {"inference_acc_pre_calib", ev.feasible ? json(ev.acc_pre_calib) : json(nullptr)},
          {"inference_acc_post_calib", ev.feasible ? json(ev.acc_post_calib) : json(nullptr)},
          {"kept", ev.kept}};
}

json predictor_event(const PredictorReport& p) {
  return {{"type", "predictor"},           {"gen", p.gen},
          {"train_rmse", p.train_rmse},    {"cv_ktau", opt_json(p.cv_ktau)},
          {"pairs_count", p.pairs_count}, {"next_gen_ktau", opt_json(p.next_gen_ktau)}};
}

json generation_event(const GenerationReport& r) {
  return {{"type", "generation"},
          {"gen", r.gen},
          {"mean_acc", r.mean_acc},
          {"max_acc", r.max_acc},
          {"best_so_far", r.best_so_far},
          {"best_id", r.best_id},
          {"mean_params", r.mean_params},
          {"mean_params_all", r.mean_params_all},
          {"members", r.members},
          {"pruned", r.pruned},
          {"init_rejections", r.init_rejections},
          {"children_planned", r.children_planned},
          {"gate_rejections", r.gate_rejections},
          {"children_dropped", r.children_dropped},
          {"duplicates", r.duplicates},
          {"children_kept", r.children_kept},
          {"epochs_used", r.epochs_used},
          {"cumulative_epochs", r.cumulative_epochs}};
}

fs::path gen_dir(const fs::path& out, int gen) { return out / "checkpoints" / ("gen_" + std::to_string(gen)); }

void save_checkpoint(const fs::path& out, int gen, const SearchState& st, std::uint64_t log_offset) {
  const fs::path dir = gen_dir(out, gen);
  fs::create_directories(dir);
  json members = json::array();
  for (const auto& c : st.members) {
    const std::string file = "member_" + std::to_string(c.id) + ".uenw";
    save_state(dir / file, c.state);
    members.push_back({{"id", c.id},
                       {"encoding", c.encoded.to_string()},
                       {"genome", genome_json(c.genome)},
                       {"shortcuts", shortcuts_json(c.spec.shortcuts)},
                       {"accuracy", opt_json(c.accuracy)},
                       {"generation", c.generation},
                       {"parents", c.parents},
                       {"pruned_from", c.pruned_from},
                       {"op", origin_name(c.op)},
                       {"epochs_trained", c.epochs_trained},
                       {"diverged", c.diverged},
                       {"state_file", file}});
  }
  json pairs = json::array();
  for (const auto& p : st.pairs) {
    std::string bits(p.bits.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = p.bits[i] ? '1' : '0';
    pairs.push_back({bits, p.accuracy});
  }
  json j = {{"completed_gen", gen},
            {"next_gen", st.next_gen},
            {"next_id", st.next_id},
            {"members", members},
            {"pairs", pairs},
            {"seen", st.seen},
            {"child_predictions", st.child_predictions},
            {"cumulative_epochs", st.cumulative_epochs},
            {"best_set", st.best_set},
            {"best_id", st.best_id},
            {"best_accuracy", st.best_accuracy},
            {"best_genome", genome_json(st.best_genome)},
            {"best_shortcuts", shortcuts_json(st.best_spec.shortcuts)},
            {"log_offset", log_offset}};
  // population.json is written last, so its presence marks a complete checkpoint.
  write_text(dir / "population.json", j.dump(1) + "\n");
}

SearchState load_checkpoint(const fs::path& dir, const SearchSpaceConfig& space, int num_classes,
                            std::uint64_t& log_offset) {
  const json j = json::parse(read_text(dir / "population.json"));
  auto layout = std::make_shared<const GenomeLayout>(make_layout(space));
  SearchState st;
  st.next_gen = j.at("next_gen").get<int>();
  st.next_id = j.at("next_id").get<std::int64_t>();
  for (const auto& m : j.at("members")) {
    Candidate c;
    c.id = m.at("id").get<std::int64_t>();
    c.encoded = EncodedGenome::from_string(m.at("encoding").get<std::string>(), layout);
    c.genome = genome_from_json(m.at("genome"));
    const auto scs = shortcuts_from_json(m.at("shortcuts"));
    c.spec = build(c.genome, space, num_classes, &scs);
    c.state = load_state(dir / m.at("state_file").get<std::string>());
    validate_state(c.spec, c.state);
    if (!m.at("accuracy").is_null()) c.accuracy = m.at("accuracy").get<double>();
    c.generation = m.at("generation").get<int>();
    c.parents = m.at("parents").get<std::vector<std::int64_t>>();
    c.pruned_from = m.at("pruned_from").get<std::int64_t>();
    c.op = parse_origin(m.at("op").get<std::string>());
    c.epochs_trained = m.at("epochs_trained").get<int>();
    c.diverged = m.at("diverged").get<bool>();
    st.members.push_back(std::move(c));
  }
  for (const auto& p : j.at("pairs")) {
    const std::string bits = p.at(0).get<std::string>();
    TrainingPair tp;
    for (char ch : bits) tp.bits.push_back(ch == '1' ? 1 : 0);
    tp.accuracy = p.at(1).get<double>();
    st.pairs.push_back(std::move(tp));
  }
  st.seen = j.at("seen").get<std::vector<std::string>>();
  st.child_predictions = j.at("child_predictions").get<std::vector<double>>();
  st.cumulative_epochs = j.at("cumulative_epochs").get<std::int64_t>();
  st.best_set = j.at("best_set").get<bool>();
  st.best_id = j.at("best_id").get<std::int64_t>();
  st.best_accuracy = j.at("best_accuracy").get<double>();
  if (st.best_set) {
    st.best_genome = genome_from_json(j.at("best_genome"));
    const auto scs = shortcuts_from_json(j.at("best_shortcuts"));
    st.best_spec = build(st.best_genome, space, num_classes, &scs);
  }
  st.best_so_far = st.best_accuracy;
  log_offset = j.at("log_offset").get<std::uint64_t>();
  return st;
}

int latest_checkpoint(const fs::path& out) {
  int best = 0;
  const fs::path root = out / "checkpoints";
  if (!fs::exists(root)) return 0;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("gen_", 0) != 0 || !fs::exists(e.path() / "population.json")) continue;
    try {
      best = std::max(best, std::stoi(name.substr(4)));
    } catch (const std::exception&) {
    }
  }
  return best;
}

// Config text of an existing run must match before anything is reused.
void check_config(const fs::path& out, const RunConfig& cfg) {
  const fs::path p = out / "config.txt";
  if (fs::exists(p) && read_text(p) != to_text(cfg)) {
    throw ConfigError("configuration differs from the one stored in " + p.string());
  }
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed) {
  const Dataset ds = cfg.dataset.empty()
                         ? generate_synthetic(cfg.synth_classes, cfg.synth_per_class, cfg.synth_size, cfg.synth_seed)
                         : load_dataset(cfg.dataset);
  if (ds.height != ds.width) throw ConfigError("dataset images must be square");
  if (ds.height != cfg.synth_size) {
    throw ConfigError("dataset image size " + std::to_string(ds.height) + " does not match synth_size " +
                      std::to_string(cfg.synth_size));
  }
  if (ds.channels != cfg.space.input_channels) throw ConfigError("dataset channel count differs from input_channels");
  const Split split = split_indices(static_cast<std::size_t>(ds.n), cfg.val_fraction, derive_seed(seed, "split"));
  PreparedData out;
  out.norm = compute_normalization(ds, split.train);
  out.train = to_labeled(ds, split.train, out.norm);
  out.val = to_labeled(ds, split.val, out.norm);
  out.num_classes = ds.class_count;
  return out;
}

FinalReport run_search(const RunConfig& cfg, const SearchOptions& opts) {
  cfg.validate();
  fs::create_directories(opts.out);
  const fs::path log_path = opts.out / "run.jsonl";
  const PreparedData data = prepare_data(cfg, opts.seed);

  SearchContext ctx;
  ctx.space = cfg.effective_space();
  ctx.evolve = cfg.evolve;
  ctx.evolve.seed = opts.seed;
  ctx.prune.calib = cfg.calib;
  ctx.predictor = cfg.predictor;
  ctx.train_base = cfg.train;
  ctx.max_params = cfg.max_params;
  ctx.num_classes = data.num_classes;
  ctx.train = &data.train;
  ctx.val = &data.val;
  ctx.parallel = make_parallel_for(opts.jobs);

  SearchState st;
  int init_rejections = 0;
  const int resume_gen = opts.resume ? latest_checkpoint(opts.out) : 0;
  std::unique_ptr<EventLog> log;
  if (resume_gen > 0) {
    check_config(opts.out, cfg);
    std::uint64_t offset = 0;
    st = load_checkpoint(gen_dir(opts.out, resume_gen), ctx.space, ctx.num_classes, offset);
    fs::resize_file(log_path, offset);
    log = std::make_unique<EventLog>(log_path, true);
  } else {
    write_text(opts.out / "config.txt", to_text(cfg));
    if (fs::exists(opts.out / "checkpoints")) fs::remove_all(opts.out / "checkpoints");
    log = std::make_unique<EventLog>(log_path, false);
    json norm = {{"type", "run"}, {"kind", "search"},          {"seed", opts.seed},
                 {"mode", mode_name(cfg.mode)}, {"train_size", data.train.size()},
                 {"val_size", data.val.size()}, {"num_classes", data.num_classes},
                 {"norm_mean", data.norm.mean}, {"norm_std", data.norm.stddev}};
    log->write(norm);
    st = initial_state(ctx, init_rejections);
  }

  EvolveObserver obs;
  obs.on_candidate = [&](const Candidate& c) { log->write(candidate_event(c)); };
  obs.on_prune_eval = [&](int gen, std::int64_t parent, const PruneEval& ev) { log->write(prune_event(gen, parent, ev)); };
  obs.on_predictor = [&](const PredictorReport& p) { log->write(predictor_event(p)); };
  obs.on_generation = [&](const GenerationReport& r) { log->write(generation_event(r)); };

  FinalReport fr;
  while (st.next_gen <= ctx.evolve.generations) {
    const int gen = st.next_gen;
    run_generation(st, ctx, obs, gen == 1 ? init_rejections : 0);
    save_checkpoint(opts.out, gen, st, log->offset());
    if (opts.stop_after > 0 && gen >= opts.stop_after && gen < ctx.evolve.generations) return fr;
  }

  fr.complete = true;
  fr.best_id = st.best_id;
  fr.accuracy = st.best_accuracy;
  fr.params = st.best_spec.param_count;
  fr.encoded = encode(st.best_genome, ctx.space).to_string();
  fr.spec_text = render(st.best_spec);
  fr.budget_epochs = st.cumulative_epochs;
  log->write({{"type", "final"},
              {"kind", "search"},
              {"mode", mode_name(cfg.mode)},
              {"seed", opts.seed},
              {"best_id", fr.best_id},
              {"accuracy", fr.accuracy},
              {"params", fr.params},
              {"encoding", fr.encoded},
              {"prune_rates", st.best_genome.prune_rates},
              {"batch_size", st.best_genome.batch_size_int()},
              {"learning_rate", st.best_genome.learning_rate},
              {"spec", fr.spec_text},
              {"budget_epochs", fr.budget_epochs}});
  write_text(opts.out / "best.txt", fr.spec_text);
  return fr;
}

FinalReport run_random_baseline(const RunConfig& cfg, const fs::path& budget_from, const SearchOptions& opts) {
  cfg.validate();
  const RunLog src = read_run_log(budget_from / "run.jsonl");
  const json* fin = nullptr;
  for (const auto& e : src.events) {
    if (e.value("type", "") == "final" && e.value("kind", "") == "search") fin = &e;
  }
  if (!fin) throw Error("no finished search in " + budget_from.string() + "; cannot derive the budget");
  if (fs::exists(budget_from / "config.txt") && read_text(budget_from / "config.txt") != to_text(cfg)) {
    throw ConfigError("random baseline config differs from the search run in " + budget_from.string());
  }
  const auto budget = fin->at("budget_epochs").get<std::int64_t>();
  const auto seed = fin->at("seed").get<std::uint64_t>();

  fs::create_directories(opts.out);
  write_text(opts.out / "config.txt", to_text(cfg));
  const PreparedData data = prepare_data(cfg, seed);
  const SearchSpaceConfig space = cfg.effective_space();
  const int epochs = cfg.evolve.epochs_gen1;
  const auto count = static_cast<std::size_t>(budget / epochs);
  EventLog log(opts.out / "run.jsonl", false);
  log.write({{"type", "run"},
             {"kind", "random"},
             {"seed", seed},
             {"mode", mode_name(cfg.mode)},
             {"budget_epochs", budget},
             {"candidates", count}});

  auto layout = std::make_shared<const GenomeLayout>(make_layout(space));
  std::vector<Candidate> cands(count);
  std::vector<int> rejections(count, 0);
  const ParallelFor parallel = make_parallel_for(opts.jobs);
  parallel(count, [&](std::size_t i) {
    Candidate& c = cands[i];
    for (std::uint64_t t = 0;; ++t) {
      c.genome = random_genome(space, derive_seed(seed, "random", i, "try", t));
      c.spec = build(c.genome, space, data.num_classes);
      if (cfg.max_params <= 0 || check_constraint(c.spec, cfg.max_params)) break;
      ++rejections[i];
    }
    c.id = static_cast<std::int64_t>(i);
    c.encoded = encode(c.genome, space, layout);
    c.generation = 1;
    c.state = init_state(c.spec, derive_seed(seed, "random_weights", i));
    TrainConfig tc = cfg.train;
    tc.epochs = epochs;
    tc.batch_size = c.genome.batch_size_int();
    tc.lr_init = c.genome.learning_rate;
    tc.seed = derive_seed(seed, "random_train", i);
    const FitResult r = train_and_evaluate(c.spec, c.state, data.train, data.val, tc);
    c.epochs_trained = epochs;
    c.accuracy = r.accuracy;
    c.diverged = r.diverged;
    c.state = ModelState{};
  });
  FinalReport fr;
  const Candidate* best = nullptr;
  for (const auto& c : cands) {
    log.write(candidate_event(c));
    if (!best || *c.accuracy > *best->accuracy) best = &c;
  }
  if (!best) throw Error("budget of " + std::to_string(budget) + " epochs buys no random candidate");
  fr.complete = true;
  fr.best_id = best->id;
  fr.accuracy = *best->accuracy;
  fr.params = best->spec.param_count;
  fr.encoded = best->encoded.to_string();
  fr.spec_text = render(best->spec);
  fr.budget_epochs = budget;
  int total_rejections = 0;
  for (int r : rejections) total_rejections += r;
  log.write({{"type", "final"},
             {"kind", "random"},
             {"mode", mode_name(cfg.mode)},
             {"seed", seed},
             {"best_id", fr.best_id},
             {"accuracy", fr.accuracy},
             {"params", fr.params},
             {"encoding", fr.encoded},
             {"prune_rates", best->genome.prune_rates},
             {"batch_size", best->genome.batch_size_int()},
             {"learning_rate", best->genome.learning_rate},
             {"spec", fr.spec_text},
             {"budget_epochs", budget},
             {"epochs_used", static_cast<std::int64_t>(count) * epochs},
             {"gate_rejections", total_rejections}});
  write_text(opts.out / "best.txt", fr.spec_text);
  return fr;
}

RunLog read_run_log(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  RunLog out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      if (!j.is_object() || !j.contains("type")) {
        ++out.skipped;
        continue;
      }
      out.events.push_back(std::move(j));
    } catch (const json::exception&) {
      ++out.skipped;
    }
  }
  return out;
}

bool same_run_log(const fs::path& a, const fs::path& b, std::string* why) {
  RunLog la = read_run_log(a), lb = read_run_log(b);
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (la.skipped || lb.skipped) return fail("malformed lines present");
  if (la.events.size() != lb.events.size()) {
    return fail("event counts differ: " + std::to_string(la.events.size()) + " vs " + std::to_string(lb.events.size()));
  }
  for (std::size_t i = 0; i < la.events.size(); ++i) {
    la.events[i].erase(kTimeField);
    lb.events[i].erase(kTimeField);
    if (la.events[i] != lb.events[i]) return fail("event " + std::to_string(i) + " differs: " + la.events[i].dump() +
                                                  " vs " + lb.events[i].dump());
  }
  return true;
}

}  // namespace jointnas
