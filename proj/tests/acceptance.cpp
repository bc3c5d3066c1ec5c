// Copyright 2026 The cflab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Acceptance runner. Prints one PASS/FAIL line per criterion with its
// runtime and exits 1 when any criterion fails.
//
//   cflab_acceptance [--only 1,4,7] [--out DIR] [--jobs N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cflab/experiment.hpp"
#include "property_checks.hpp"

using namespace cflab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Cells are keyed by their serialized config so the same configuration
// (for example the default mix, which appears in three matrices) trains once.
class CellCache {
 public:
  explicit CellCache(std::size_t jobs) : jobs_(jobs) {}

  std::vector<const CellResult*> run(const std::vector<AblationCell>& cells) {
    std::vector<AblationCell> missing;
    for (const AblationCell& c : cells) {
      const std::string key = to_json(c.config).dump();
      if (!done_.count(key)) missing.push_back(c);
    }
    const std::vector<CellResult> fresh = run_cells(missing, jobs_, "");
    for (std::size_t i = 0; i < missing.size(); ++i) {
      done_[to_json(missing[i].config).dump()] = fresh[i];
    }
    std::vector<const CellResult*> out;
    for (const AblationCell& c : cells) out.push_back(&done_.at(to_json(c.config).dump()));
    return out;
  }

 private:
  std::size_t jobs_;
  std::map<std::string, CellResult> done_;
};

double mean_of(const CellResult& r, const std::string& metric) {
  return r.report.metrics.at(metric).mean;
}

const AblationCell& cell_named(const std::vector<AblationCell>& cells, const std::string& name) {
  for (const AblationCell& c : cells) {
    if (c.name == name) return c;
  }
  throw Error(ErrorKind::kInvalidConfig, "no cell " + name);
}

void print_cells(const std::vector<AblationCell>& cells,
                 const std::vector<const CellResult*>& results, const std::string& metric) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const MetricSummary& m = results[i]->report.metrics.at(metric);
    std::printf("    %-22s %s %.4f +- %.4f\n", cells[i].name.c_str(), metric.c_str(), m.mean,
                m.std);
  }
}

Outcome unit_values() {
  std::vector<std::string> bad;
  const Vector e{1.0, 0.0, 0.0};
  const std::vector<Vector> one{e};
  const double l1 = align_loss(one, one, 0.07).value;
  if (std::abs(l1) > 1e-12) bad.push_back("align N=1 " + fmt("%.3e", l1));
  const std::vector<Vector> four(4, e);
  const double l4 = align_loss(four, four, 0.07).value;
  if (std::abs(l4 - std::log(4.0)) > 1e-9) bad.push_back("align N=4 " + fmt("%.12f", l4));
  const double c = csd_loss(0.9, std::vector<double>{0.8}, 0.25).value;
  if (std::abs(c - 0.15) > 1e-12) bad.push_back("csd " + fmt("%.15f", c));
  const HingeLoss f = fcd_loss(0.9, std::vector<double>{0.3, 0.7}, 0.30);
  if (std::abs(f.value - 0.10) > 1e-12 || f.hard_index != 1u) {
    bad.push_back("fcd " + fmt("%.15f", f.value));
  }
  const double t = weighted_total(LossConfig{}, 0.2, 0.1, 0.0);
  if (std::abs(t - 0.245) > 1e-12) bad.push_back("total " + fmt("%.15f", t));
  std::string detail = "align(1)=0, align(4)=ln 4, csd=0.15, fcd=0.10 at index 1, total=0.245";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

Outcome gradients() {
  GradcheckConfig gc;
  const GradcheckReport r = run_gradcheck(gc);
  std::size_t checked = 0;
  std::size_t skipped = 0;
  for (const auto& [dims, t] : r.tensors) {
    checked += t.checked;
    skipped += t.skipped;
  }
  return {r.pass && r.max_rel_error < 1e-4,
          "max rel err " + fmt("%.2e", r.max_rel_error) + " over " + std::to_string(checked) +
              " coordinates (" + std::to_string(skipped) +
              " at kinks skipped), 20 batches x 2 sizes"};
}

Outcome oracle() {
  EvalSuiteConfig cfg;
  cfg.sigma = 0.0;
  cfg.retrieval_pairs = 100;
  const RunMetrics m = evaluate_suite(FactOracle{}, cfg, 7);
  std::vector<std::string> keys{"replace_attribute", "replace_object", "replace_relation",
                                "replace_location", "recall_i2t@1", "recall_t2i@1",
                                "probe_accuracy", "probe_precision", "probe_recall", "probe_f1"};
  std::string off;
  for (const std::string& k : keys) {
    if (m.at(k) != 1.0) off += " " + k + "=" + fmt("%.4f", m.at(k));
  }
  return {off.empty(), off.empty() ? "replace x4, recall@1 (N=100) and probe all 1.0" : off};
}

Outcome ordering(CellCache& cache, const ExperimentConfig& base,
                 std::vector<const CellResult*>* full_out) {
  const auto all = ablation_matrix("loss_components", base);
  std::vector<AblationCell> cells;
  for (const char* n : {"full", "align", "align_csd", "align_fcd", "csd_fcd"}) {
    cells.push_back(cell_named(all, n));
  }
  const auto res = cache.run(cells);
  print_cells(cells, res, "replace_avg");
  *full_out = {res[0]};
  const double full = mean_of(*res[0], "replace_avg");
  const double align = mean_of(*res[1], "replace_avg");
  bool pass = full >= align + 0.02;
  std::string detail = "full " + fmt("%.4f", full) + " vs align " + fmt("%.4f", align) +
                       " (need +0.02)";
  for (std::size_t i = 2; i < cells.size(); ++i) {
    const double v = mean_of(*res[i], "replace_avg");
    const bool ok = v >= std::min(full, align);
    pass = pass && ok;
    detail += "; " + cells[i].name + " " + fmt("%.4f", v) + (ok ? "" : " below both");
  }
  return {pass, detail};
}

Outcome type_removal(CellCache& cache, const ExperimentConfig& base) {
  const auto all = ablation_matrix("cf_type_removal", base);
  std::vector<AblationCell> cells;
  for (const char* n : {"full", "no_relation", "no_attribute", "no_object"}) {
    cells.push_back(cell_named(all, n));
  }
  const auto res = cache.run(cells);
  struct Pair {
    std::size_t cell;
    const char* metric;
  };
  bool pass = true;
  std::string detail;
  for (const Pair p : {Pair{1, "replace_rel"}, Pair{2, "replace_attr"}, Pair{3, "replace_obj"}}) {
    const double full = mean_of(*res[0], p.metric);
    const double removed = mean_of(*res[p.cell], p.metric);
    const bool ok = removed < full;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += cells[p.cell].name + " " + p.metric + " " + fmt("%.4f", removed) + " vs " +
              fmt("%.4f", full) + (ok ? "" : " (no drop)");
  }
  return {pass, detail};
}

Outcome quantity(CellCache& cache, const ExperimentConfig& base) {
  const auto cells = ablation_matrix("cf_quantity", base);
  const auto res = cache.run(cells);
  print_cells(cells, res, "replace_avg");
  auto at = [&](const std::string& n) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].name == n) return mean_of(*res[i], "replace_avg");
    }
    throw Error(ErrorKind::kInvalidConfig, "no cell " + n);
  };
  const double r0 = at("cf_ratio_0.0");
  const double r2 = at("cf_ratio_0.2");
  const double r8 = at("cf_ratio_0.8");
  const double r10 = at("cf_ratio_1.0");
  const bool pass = r10 > r0 && (r10 - r8) < (r2 - r0);
  return {pass, "1.0 " + fmt("%.4f", r10) + " vs 0.0 " + fmt("%.4f", r0) + "; gain 0.8->1.0 " +
                    fmt("%+.4f", r10 - r8) + " vs 0.0->0.2 " + fmt("%+.4f", r2 - r0)};
}

Outcome margin(const ExperimentConfig& base, const CellResult& full) {
  std::vector<RunMetrics> untrained;
  for (std::uint64_t s : full.seeds) untrained.push_back(evaluate_untrained(base, s));
  const double before = aggregate_seeds(untrained).metrics.at("margin_strict").mean;
  const double after = mean_of(full, "margin_strict");
  const bool pass = after >= 0.90 && after - before >= 0.3;
  return {pass, "strict fraction " + fmt("%.4f", after) + " (need >= 0.90), untrained " +
                    fmt("%.4f", before) + " (need gain >= 0.3)"};
}

Outcome invariants() {
  std::vector<std::string> failed;
  std::size_t total = 0;
  std::uint64_t seed = 20261016;
  for (const testing::PropertyCheck& p : testing::acceptance_properties()) {
    const testing::PropertyResult r = p.run(seed++, 1000);
    total += r.cases;
    if (!r.ok()) failed.push_back(r.name + " (" + std::to_string(r.failures) + " failures)");
  }
  std::string detail = std::to_string(testing::acceptance_properties().size()) +
                       " properties, " + std::to_string(total) + " cases";
  for (const auto& f : failed) detail += "; " + f;
  return {failed.empty(), detail};
}

Outcome determinism(const ExperimentConfig& base, const std::string& out) {
  ExperimentConfig cfg = base;
  cfg.seeds = {0};
  const std::vector<AblationCell> cell{{"determinism", cfg}};
  std::vector<std::string> roots{out + "/determinism_a", out + "/determinism_b"};
  for (const std::string& r : roots) {
    std::filesystem::remove_all(r);
    run_cells(cell, 1, r);
  }
  std::string diff;
  for (const char* f : {"determinism/seed0/metrics.jsonl", "determinism/seed0/eval.json",
                        "determinism/seed0/checkpoint.json", "determinism/report.json",
                        "determinism/report.csv"}) {
    const std::string a = slurp(roots[0] + "/" + f);
    if (a.empty() || a != slurp(roots[1] + "/" + f)) diff += std::string(" ") + f;
  }
  return {diff.empty(), diff.empty() ? "metrics stream, eval, checkpoint and reports identical"
                                     : "differ:" + diff};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cflab acceptance criteria"};
  std::string only;
  std::string out = "acceptance_out";
  std::size_t jobs = 1;
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_option("--out", out, "scratch directory");
  app.add_option("--jobs", jobs, "parallel training runs")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  for (std::size_t i = 0; i < only.size();) {
    const std::size_t comma = std::min(only.find(',', i), only.size());
    selected.insert(std::stoi(only.substr(i, comma - i)));
    i = comma + 1;
  }
  auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  const ExperimentConfig base;
  CellCache cache(jobs);
  std::vector<const CellResult*> full;
  bool all_pass = true;

  auto report = [&](int n, const char* title, const std::function<Outcome()>& body) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all_pass = all_pass && o.pass;
    std::printf("%s criterion %d (%s) [%.1f s]: %s\n", o.pass ? "PASS" : "FAIL", n, title, secs,
                o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "loss unit values", unit_values);
  report(2, "gradient verification", gradients);
  report(3, "oracle equivalence", oracle);
  report(4, "loss component ordering", [&] { return ordering(cache, base, &full); });
  report(5, "counterfactual type removal", [&] { return type_removal(cache, base); });
  report(6, "counterfactual quantity", [&] { return quantity(cache, base); });
  report(7, "margin separation", [&] {
    if (full.empty()) ordering(cache, base, &full);
    return margin(base, *full.front());
  });
  report(8, "invariant suites", invariants);
  report(9, "determinism", [&] { return determinism(base, out); });
  return all_pass ? 0 : 1;
}
