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

// cflab command-line entry point.
//
//   cflab gen-data  [--config F] [--seed N] [--out FILE]
//   cflab train     [--config F] [--seed N | --seeds CSV] [--data FILE] [--out DIR]
//   cflab eval      [--config F] --checkpoint FILE... [--out DIR]
//   cflab gradcheck [--config F] [--batches N] [--corrupt]
//   cflab ablate    MATRIX [--config F] [--seeds CSV] [--jobs N] [--out DIR]
//   cflab sweep     [--config F] [--seeds CSV] [--jobs N] [--out DIR]
//
// Every command also takes --set section.key=value (repeatable; flags win
// over the config file). Exit codes: 0 success, 1 verification failure,
// 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cflab/experiment.hpp"

namespace {

using cflab::ExperimentConfig;

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string out;
  std::size_t jobs = 1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_jobs) {
  cmd->add_option("--config", f.config, "JSON experiment config");
  cmd->add_option("--seed", f.seed, "single run seed (replaces the seeds list)");
  cmd->add_option("--seeds", f.seeds, "comma-separated run seeds");
  cmd->add_option("--out", f.out, "output path");
  cmd->add_option("--set", f.overrides, "override section.key=value")->take_all();
  if (with_jobs) cmd->add_option("--jobs", f.jobs, "parallel runs")->check(CLI::PositiveNumber);
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string item =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (item.empty() || item[0] == '-') throw std::invalid_argument("negative");
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw cflab::Error(cflab::ErrorKind::kInvalidConfig, "bad seed list '" + csv + "'");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : cflab::load_config(f.config);
  for (const std::string& o : f.overrides) cflab::apply_override(cfg, o);
  if (!f.seeds.empty()) cfg.seeds = parse_seeds(f.seeds);
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.out.empty()) cfg.out_dir = f.out;
  cflab::validate(cfg);
  return cfg;
}

std::string seed_dir(const std::string& root, std::uint64_t seed) {
  return root + "/seed" + std::to_string(seed);
}

void write_report(const std::string& dir, const cflab::EvalReport& report) {
  std::filesystem::create_directories(dir);
  cflab::write_text(dir + "/report.json", cflab::to_json(report).dump(2) + "\n");
  cflab::write_text(dir + "/report.csv", cflab::to_csv(report));
}

int cmd_gen_data(const CommonFlags& f) {
  ExperimentConfig cfg = resolve(f);
  const std::uint64_t seed = cfg.seeds.front();
  const std::string path =
      f.out.empty() ? cfg.out_dir + "/data_seed" + std::to_string(seed) + ".jsonl" : f.out;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const cflab::Dataset data = cflab::generate_dataset(cfg, seed);
  cflab::write_dataset(path, data);
  std::cout << cflab::to_json(cflab::summarize(data)).dump() << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& f, const std::string& data_path) {
  ExperimentConfig cfg = resolve(f);
  if (!data_path.empty() && cfg.seeds.size() != 1) {
    throw cflab::Error(cflab::ErrorKind::kInvalidConfig, "--data needs exactly one seed");
  }
  std::vector<cflab::RunMetrics> runs;
  for (std::uint64_t seed : cfg.seeds) {
    const cflab::Dataset data =
        data_path.empty() ? cflab::generate_dataset(cfg, seed) : cflab::read_dataset(data_path);
    const cflab::RunOutput run = cflab::run_seed(cfg, data, seed);
    const std::string dir = seed_dir(cfg.out_dir, seed);
    std::filesystem::create_directories(dir);
    std::string stream;
    for (const auto& rec : run.train.metrics) stream += rec.dump() + "\n";
    cflab::write_text(dir + "/metrics.jsonl", stream);
    cflab::save_checkpoint(dir + "/checkpoint.json", {run.train.params, seed});
    cflab::write_text(dir + "/eval.json", cflab::to_json(run.metrics).dump(2) + "\n");
    std::printf("seed %llu: replace_avg %.4f margin_strict %.4f\n",
                static_cast<unsigned long long>(seed), run.metrics.at("replace_avg"),
                run.metrics.at("margin_strict"));
    runs.push_back(run.metrics);
  }
  write_report(cfg.out_dir, cflab::aggregate_seeds(runs));
  cflab::write_text(cfg.out_dir + "/config.json", cflab::to_json(cfg).dump(2) + "\n");
  return kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::vector<std::string>& checkpoints) {
  ExperimentConfig cfg = resolve(f);
  std::vector<cflab::RunMetrics> runs;
  std::string stream;
  for (const std::string& path : checkpoints) {
    const cflab::Checkpoint ckpt = cflab::load_checkpoint(path);
    if (!(ckpt.params.dims() == cflab::encoder_dims(cfg))) {
      throw cflab::Error(cflab::ErrorKind::kShapeMismatch,
                         "checkpoint '" + path + "' does not match the configured encoder dims");
    }
    runs.push_back(cflab::evaluate_params(cfg, ckpt.params));
    nlohmann::ordered_json line;
    line["checkpoint"] = path;
    line["seed"] = ckpt.seed;
    line["eval"] = cflab::to_json(runs.back());
    stream += line.dump() + "\n";
  }
  const cflab::EvalReport report = cflab::aggregate_seeds(runs);
  std::filesystem::create_directories(cfg.out_dir);
  cflab::write_text(cfg.out_dir + "/eval_runs.jsonl", stream);
  write_report(cfg.out_dir, report);
  std::cout << cflab::to_csv(report);
  return kExitOk;
}

int cmd_gradcheck(const CommonFlags& f, std::size_t batches, bool corrupt) {
  ExperimentConfig cfg = resolve(f);
  cflab::GradcheckConfig gc;
  gc.batches = batches;
  gc.loss = cfg.train.loss;
  gc.seed = cfg.seeds.front();
  if (corrupt) {
    gc.corrupt = [](cflab::ParamGrads& g) {
      for (double& v : g.w2.values()) v *= 1.01;
    };
  }
  const cflab::GradcheckReport r = cflab::run_gradcheck(gc);
  for (const auto& [config, t] : r.tensors) {
    std::printf("%-10s %-13s max_rel_err %.3e  checked %zu  skipped %zu\n", config.c_str(),
                t.tensor.c_str(), t.max_rel_error, t.checked, t.skipped);
  }
  std::printf("%s max_rel_err %.3e (tolerance %.0e)\n", r.pass ? "PASS" : "FAIL",
              r.max_rel_error, gc.tolerance);
  if (!f.out.empty()) cflab::write_text(f.out, cflab::to_json(r).dump(2) + "\n");
  return r.pass ? kExitOk : kExitVerify;
}

int cmd_ablate(const CommonFlags& f, const std::string& matrix) {
  ExperimentConfig cfg = resolve(f);
  const auto cells = cflab::ablation_matrix(matrix, cfg);
  const std::string root = cfg.out_dir + "/" + matrix;
  const auto results = cflab::run_cells(cells, f.jobs, root);
  const std::string csv =
      matrix == "sweep" ? cflab::sweep_csv(cells, results) : cflab::ablation_csv(results);
  cflab::write_text(root + "/results.csv", csv);
  std::cout << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cflab: counterfactual image-text objective lab"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string data_path;
  std::vector<std::string> checkpoints;
  std::size_t batches = 20;
  bool corrupt = false;
  std::string matrix;

  auto* gen = app.add_subcommand("gen-data", "write a counterfactual dataset (.jsonl + manifest)");
  add_common(gen, flags, false);
  auto* trn = app.add_subcommand("train", "train and evaluate one run per seed");
  add_common(trn, flags, false);
  trn->add_option("--data", data_path, "dataset written by gen-data (single seed)");
  auto* evl = app.add_subcommand("eval", "evaluate checkpoints and aggregate over them");
  add_common(evl, flags, false);
  evl->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)")
      ->required()
      ->take_all();
  auto* grd = app.add_subcommand("gradcheck", "finite-difference check of the loss gradients");
  add_common(grd, flags, false);
  grd->add_option("--batches", batches, "random batches per encoder size")
      ->check(CLI::PositiveNumber);
  grd->add_flag("--corrupt", corrupt, "negative control: perturb the analytic gradients");
  auto* abl = app.add_subcommand("ablate", "run a named ablation matrix");
  add_common(abl, flags, true);
  abl->add_option("matrix", matrix, "loss_components, cf_modality, cf_type_removal, "
                                    "cf_quantity, k_sweep")
      ->required();
  auto* swp = app.add_subcommand("sweep", "loss weight and margin sensitivity rows");
  add_common(swp, flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(flags);
    if (*trn) return cmd_train(flags, data_path);
    if (*evl) return cmd_eval(flags, checkpoints);
    if (*grd) return cmd_gradcheck(flags, batches, corrupt);
    if (*abl) return cmd_ablate(flags, matrix);
    if (*swp) return cmd_ablate(flags, "sweep");
  } catch (const cflab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
