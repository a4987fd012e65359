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

#include "jointnas/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "jointnas/search.hpp"

namespace jointnas {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

std::string run_name(const fs::path& dir) {
  fs::path p = dir;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

}  // namespace

RunSummary summarize_run(const fs::path& run_dir) {
  const RunLog log = read_run_log(run_dir / "run.jsonl");
  RunSummary s;
  s.name = run_name(run_dir);
  s.skipped_lines = log.skipped;
  std::map<int, GenerationRow> rows;
  std::map<int, double> ktau;
  for (const auto& e : log.events) {
    const std::string type = e.value("type", "");
    try {
      if (type == "run") {
        s.kind = e.value("kind", "search");
        s.mode = e.value("mode", "");
        s.seed = e.value("seed", std::uint64_t{0});
      } else if (type == "generation") {
        GenerationRow r;
        r.gen = e.at("gen").get<int>();
        r.mean_params = e.at("mean_params").get<double>();
        r.best_acc = e.at("max_acc").get<double>();
        r.mean_acc = e.at("mean_acc").get<double>();
        rows[r.gen] = r;
      } else if (type == "predictor") {
        if (!e.at("cv_ktau").is_null()) ktau[e.at("gen").get<int>()] = e.at("cv_ktau").get<double>();
      } else if (type == "final") {
        s.finished = true;
        s.kind = e.value("kind", s.kind);
        s.best_acc = e.at("accuracy").get<double>();
        s.best_params = e.at("params").get<std::int64_t>();
        s.budget_epochs = e.at("budget_epochs").get<std::int64_t>();
        s.best_spec = e.value("spec", "");
      }
    } catch (const nlohmann::json::exception&) {
      ++s.skipped_lines;
    }
  }
  for (auto& [g, r] : rows) {
    if (auto it = ktau.find(g); it != ktau.end()) r.cv_ktau = it->second;
    s.generations.push_back(r);
  }
  return s;
}

std::vector<RunSummary> write_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw Error("report needs at least one run directory");
  std::vector<RunSummary> runs;
  for (const auto& d : run_dirs) runs.push_back(summarize_run(d));

  const bool has_random = std::any_of(runs.begin(), runs.end(), [](const RunSummary& r) { return r.kind == "random"; });
  if (has_random && runs.size() > 1) {
    for (const auto& r : runs) {
      if (!r.finished) throw Error("run " + r.name + " did not finish; refusing to compare");
      if (r.budget_epochs != runs.front().budget_epochs) {
        throw Error("budget mismatch: " + runs.front().name + " used " + std::to_string(runs.front().budget_epochs) +
                    " epochs but " + r.name + " used " + std::to_string(r.budget_epochs) + "; refusing to compare");
      }
    }
  }

  fs::create_directories(out);
  std::set<std::string> names;
  for (auto& r : runs) {
    std::string name = r.name;
    for (int i = 2; !names.insert(name).second; ++i) name = r.name + "_" + std::to_string(i);
    r.name = name;
    if (r.kind != "random") {
      std::ostringstream csv;
      csv << "gen,mean_params,best_acc,mean_acc,cv_ktau\n";
      for (const auto& g : r.generations) {
        csv << g.gen << ',' << num(g.mean_params) << ',' << num(g.best_acc) << ',' << num(g.mean_acc) << ','
            << (g.cv_ktau ? num(*g.cv_ktau) : "") << '\n';
      }
      write_file(out / (name + "_generations.csv"), csv.str());
    }
    if (r.finished) write_file(out / (name + "_best.txt"), r.best_spec);
  }
  if (runs.size() > 1) {
    std::ostringstream csv;
    csv << "run,kind,mode,seed,best_acc,best_params,budget_epochs\n";
    for (const auto& r : runs) {
      csv << r.name << ',' << r.kind << ',' << r.mode << ',' << r.seed << ',' << num(r.best_acc) << ','
          << r.best_params << ',' << r.budget_epochs << '\n';
    }
    write_file(out / "comparison.csv", csv.str());
  }
  return runs;
}

}  // namespace jointnas
