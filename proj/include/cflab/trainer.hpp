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

#ifndef CFLAB_TRAINER_HPP_
#define CFLAB_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cflab/counterfactuals.hpp"
#include "cflab/encoders.hpp"
#include "cflab/losses.hpp"
#include "json.hpp"

namespace cflab {

using Dataset = std::vector<CounterfactualUnit>;

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;  // factual pairs per step
  // Counterfactual units per factual pair.
  double cf_ratio = 1.0;
  // Reference peak learning rate and the desk-scale multiplier applied to it;
  // the optimizer uses peak_lr * lr_multiplier (1e-3 by default).
  double peak_lr = 1e-5;
  double lr_multiplier = 100.0;
  std::size_t warmup_steps = 50;
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-6;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::size_t eval_every = 0;  // 0 disables eval snapshots
  bool learnable_temperature = true;
  double dropout = 0.0;
  // Only 1 is supported.
  std::size_t grad_accumulation = 1;

  double effective_peak_lr() const { return peak_lr * lr_multiplier; }
  bool operator==(const TrainConfig&) const = default;
};

/// Throws ErrorKind::kInvalidConfig.
void validate(const TrainConfig& cfg);

/// Linear warmup to the peak, then half-cosine decay to zero at cfg.steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

/// Global L2 norm over every gradient tensor (temperature included).
double global_norm(const ParamGrads& grads);

/// Rescales grads to norm clip_norm when their global norm exceeds it.
/// Returns the norm before clipping.
double clip_grads(ParamGrads& grads, double clip_norm);

struct OptimizerState {
  ParamGrads first_moment;
  ParamGrads second_moment;
  std::size_t step = 0;

  static OptimizerState for_params(const EncoderParams& params);
};

/// One AdamW update of a flat tensor at (1-based) step t:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta
void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t t, double lr, double weight_decay,
                  const TrainConfig& cfg);

/// AdamW over every tensor; the temperature is exempt from weight decay and
/// clamped to [0.01, 1.0] afterwards.
void adamw_step(EncoderParams& params, const ParamGrads& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg);

/// Without-replacement anchor sampling with a fresh shuffle per epoch. A
/// partial tail of an epoch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  Prng& rng() { return rng_; }

 private:
  void reshuffle();

  std::size_t dataset_size_;
  std::size_t batch_size_;
  Prng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Number of counterfactual units that join a batch of factual pairs.
std::size_t units_per_batch(double cf_ratio, std::size_t batch_size);

/// Factual pairs are the anchors of the sampled units. The first
/// ceil(cf_ratio * B) of them (up to B) contribute their units; when cf_ratio
/// > 1 the remainder come from distinct anchors outside the factual batch.
/// Throws ErrorKind::kDatasetTooSmall.
Batch assemble_batch(const Dataset& dataset, const TrainConfig& cfg, BatchSampler& sampler);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double align = 0.0;
  double csd = 0.0;
  double fcd = 0.0;
  double grad_norm = 0.0;
  double temperature = 0.0;
};

nlohmann::ordered_json to_json(const StepRecord& r);

using EvalHook = std::function<nlohmann::ordered_json(const EncoderParams&, std::size_t step)>;

struct TrainResult {
  EncoderParams params;
  std::vector<StepRecord> steps;
  // Line-delimited metrics in emission order: one loss record per step plus
  // {"step": s, "eval": {...}} snapshots every eval_every steps.
  std::vector<nlohmann::ordered_json> metrics;
};

/// Stream ids for deriving per-purpose seeds from TrainConfig::seed.
enum class SeedStream : std::uint64_t { kInit = 1, kSampler = 2, kDropout = 3 };

/// Runs cfg.steps iterations of assemble -> total_loss -> clip -> AdamW.
/// Throws ErrorKind::kNonFinite (with the step) if the loss diverges.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const EncoderDims& dims,
                  const EvalHook& eval = {});

/// Same loop from explicit initial parameters.
TrainResult train_from(const Dataset& dataset, const TrainConfig& cfg, EncoderParams params,
                       const EvalHook& eval = {});

}  // namespace cflab

#endif  // CFLAB_TRAINER_HPP_
