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

// Experiment plumbing shared by the command-line tool and the acceptance
// suite: configuration, dataset files, seeded runs, ablation matrices, the
// hyperparameter sweep and the finite-difference gradient check.

#ifndef CFLAB_EXPERIMENT_HPP_
#define CFLAB_EXPERIMENT_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cflab/counterfactuals.hpp"
#include "cflab/encoders.hpp"
#include "cflab/eval.hpp"
#include "cflab/losses.hpp"
#include "cflab/trainer.hpp"
#include "cflab/world.hpp"
#include "json.hpp"

namespace cflab {

struct ExperimentConfig {
  // world
  double sigma = kDefaultImageNoise;
  SceneCaps caps;
  // counterfactuals (cf_ratio lives in train)
  std::size_t num_complete = 4;
  std::size_t num_edited = 4;
  KindMix kind_mix;
  PairMode mode = PairMode::kJoint;
  // encoder
  std::size_t hidden = 128;
  std::size_t embed = 64;
  // train and loss
  TrainConfig train;
  // data
  std::size_t train_units = 2000;
  std::uint64_t data_seed = 0;
  // eval
  EvalSuiteConfig eval;
  std::uint64_t eval_seed = 7;

  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir = "runs";

  bool operator==(const ExperimentConfig&) const = default;
};

/// Sections and keys:
///   world           sigma, max_objects, max_relations
///   counterfactuals K, J, cf_ratio, mode, kind_mix{attribute,object,relation,location}
///   encoder         hidden, embed
///   train           steps, batch_size, peak_lr, lr_multiplier, warmup_steps,
///                   weight_decay, adam_beta1, adam_beta2, adam_eps, clip_norm,
///                   eval_every, learnable_temperature, dropout, grad_accumulation
///   loss            alpha, beta, gamma, m1, m2
///   data            train_units, seed
///   eval            replace_scenes, retrieval_pairs, zeroshot_images,
///                   probe_test_scenes, probe_validation_scenes, margin_units,
///                   margin_edited, seed
///   seeds, out_dir
/// Missing keys keep their defaults. Unknown keys and ill-typed values throw
/// ErrorKind::kInvalidConfig.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

/// Applies "section.key=value" (or "seeds=..."/"out_dir=..."). The value is
/// parsed as JSON when possible, else taken as a string. Keys and types are
/// checked; call validate() once all overrides are in.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

/// Throws ErrorKind::kInvalidConfig.
void validate(const ExperimentConfig& cfg);

UnitSpec unit_spec(const ExperimentConfig& cfg);
EncoderDims encoder_dims(const ExperimentConfig& cfg);
EvalSuiteConfig eval_config(const ExperimentConfig& cfg);
TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed);

/// Training units for run seed `seed`, drawn from mix_seed(data_seed, seed).
/// A NoLegalEdit failure is rethrown naming the record index.
Dataset generate_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

struct DatasetManifest {
  std::size_t units = 0;
  std::size_t complete_pairs = 0;
  std::size_t edited_images = 0;
  std::map<std::string, std::size_t> complete_by_kind;
  std::map<std::string, std::size_t> edited_by_kind;
};

DatasetManifest summarize(const Dataset& data);
nlohmann::ordered_json to_json(const DatasetManifest& m);

/// One unit per line; the manifest goes to `path + ".manifest.json"`.
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

struct RunOutput {
  TrainResult train;
  RunMetrics metrics;  // eval suite plus train_loss_variance
};

/// Population variance of the per-step total loss over the last tenth of the
/// steps (at least one step).
double tail_loss_variance(const std::vector<StepRecord>& steps);

/// Trains on `data` with run seed `seed` and evaluates the final parameters
/// on held-out sets drawn from eval_seed. With train.eval_every > 0 the
/// metrics stream carries eval snapshots.
RunOutput run_seed(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed);
RunOutput run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Eval suite on freshly initialized parameters for run seed `seed`.
RunMetrics evaluate_untrained(const ExperimentConfig& cfg, std::uint64_t seed);

RunMetrics evaluate_params(const ExperimentConfig& cfg, const EncoderParams& params);

struct AblationCell {
  std::string name;
  ExperimentConfig config;
};

/// Matrix names: loss_components, cf_modality, cf_type_removal, cf_quantity,
/// k_sweep, sweep. Throws ErrorKind::kInvalidConfig for any other name.
std::vector<AblationCell> ablation_matrix(std::string_view name, const ExperimentConfig& base);
std::vector<std::string> ablation_matrix_names();

struct CellResult {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<RunMetrics> runs;
  EvalReport report;
};

/// Runs every cell for every one of its seeds on up to `jobs` threads. Results
/// do not depend on `jobs`. When out_dir is non-empty each run writes
/// out_dir/<cell>/seed<s>/{metrics.jsonl,checkpoint.json,eval.json} and each
/// cell writes out_dir/<cell>/report.{json,csv}.
std::vector<CellResult> run_cells(const std::vector<AblationCell>& cells, std::size_t jobs,
                                  const std::string& out_dir);

/// Columns: cell,n_seeds, then <metric>_mean,<metric>_std for replace_obj,
/// replace_attr, replace_rel, replace_avg, replace_attribute, replace_object,
/// replace_relation, replace_location, margin_strict.
std::string ablation_csv(const std::vector<CellResult>& results);

/// Columns: cell,alpha,beta,gamma,m1,m2,n_seeds,replace_avg_mean,
/// replace_avg_std,loss_variance_mean,loss_variance_std.
std::string sweep_csv(const std::vector<AblationCell>& cells,
                      const std::vector<CellResult>& results);

struct GradcheckConfig {
  std::size_t batches = 20;
  std::size_t batch_size = 8;  // N factual pairs, each with its unit
  std::vector<std::pair<std::size_t, std::size_t>> dims{{16, 32}, {128, 64}};  // (h, d)
  std::size_t coords_per_tensor = 12;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  LossConfig loss;
  // Test hook: applied to the analytic gradients before comparison.
  std::function<void(ParamGrads&)> corrupt;
};

struct TensorCheck {
  std::string tensor;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose +-step crosses a kink
};

struct GradcheckReport {
  bool pass = true;
  double max_rel_error = 0.0;
  // One entry per (h, d) and tensor, in dims then tensor order.
  std::vector<std::pair<std::string, TensorCheck>> tensors;
};

/// Per tensor, relative error = max|a - n| / max(max|a|, max|n|, 1e-10) over
/// the checked coordinates, a analytic and n central-difference. Half of the
/// coordinates are the largest analytic entries, half uniform draws.
GradcheckReport run_gradcheck(const GradcheckConfig& cfg);
nlohmann::ordered_json to_json(const GradcheckReport& r);

void write_text(const std::string& path, const std::string& text);

}  // namespace cflab

#endif  // CFLAB_EXPERIMENT_HPP_
