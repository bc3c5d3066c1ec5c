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

#include "cflab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

namespace cflab {

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::kInvalidConfig, why); };
  if (cfg.steps < 1) fail("train.steps must be >= 1");
  if (cfg.batch_size < 1) fail("train.batch_size must be >= 1");
  if (!(cfg.cf_ratio >= 0.0)) fail("train.cf_ratio must be >= 0");
  if (!(cfg.effective_peak_lr() > 0.0)) fail("learning rate must be positive");
  if (cfg.warmup_steps > cfg.steps) fail("train.warmup_steps exceeds train.steps");
  if (!(cfg.weight_decay >= 0.0)) fail("train.weight_decay must be >= 0");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0, 1)");
  if (!(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0, 1)");
  if (!(cfg.adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(cfg.clip_norm > 0.0)) fail("train.clip_norm must be positive");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) fail("train.dropout must lie in [0, 1)");
  if (cfg.grad_accumulation != 1) fail("gradient accumulation is not supported (must be 1)");
  validate(cfg.loss);
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  const double peak = cfg.effective_peak_lr();
  if (step < cfg.warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.steps <= cfg.warmup_steps) return peak;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.steps - cfg.warmup_steps);
  return std::max(0.0, 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress)));
}

double global_norm(const ParamGrads& grads) {
  double acc = 0.0;
  for (const auto& t : grads.tensors()) {
    for (double g : t.values) acc += g * g;
  }
  return std::sqrt(acc);
}

double clip_grads(ParamGrads& grads, double clip_norm) {
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto& t : grads.tensors()) {
      for (double& g : t.values) g *= scale;
    }
  }
  return norm;
}

OptimizerState OptimizerState::for_params(const EncoderParams& params) {
  return {EncoderParams::zeros(params.dims()), EncoderParams::zeros(params.dims()), 0};
}

void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::size_t t, double lr, double weight_decay,
                  const TrainConfig& cfg) {
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + lr * weight_decay * theta[i];
  }
}

void adamw_step(EncoderParams& params, const ParamGrads& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
  ++state.step;
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].values.size() != g[k].values.size()) {
      throw Error(ErrorKind::kShapeMismatch, "gradient shape differs for " +
                                                 std::string(p[k].name));
    }
    const bool is_temperature = p[k].name == "log_inv_temp";
    adamw_update(p[k].values, g[k].values, m[k].values, v[k].values, state.step, lr,
                 is_temperature ? 0.0 : cfg.weight_decay, cfg);
  }
  params.clamp_temperature();
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : dataset_size_(dataset_size), batch_size_(batch_size), rng_(seed), order_(dataset_size) {
  if (dataset_size < batch_size || batch_size == 0) {
    throw Error(ErrorKind::kDatasetTooSmall, "dataset of " + std::to_string(dataset_size) +
                                                 " units cannot fill a batch of " +
                                                 std::to_string(batch_size));
  }
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  rng_.shuffle(order_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_size_ > dataset_size_) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return out;
}

std::size_t units_per_batch(double cf_ratio, std::size_t batch_size) {
  // The small slack keeps products like 0.6 * 5 = 3.0000000000000004 at 3.
  return static_cast<std::size_t>(std::ceil(cf_ratio * static_cast<double>(batch_size) - 1e-9));
}

Batch assemble_batch(const Dataset& dataset, const TrainConfig& cfg, BatchSampler& sampler) {
  if (dataset.empty()) throw Error(ErrorKind::kDatasetTooSmall, "dataset is empty");
  const std::size_t wanted = units_per_batch(cfg.cf_ratio, cfg.batch_size);
  if (wanted > dataset.size()) {
    throw Error(ErrorKind::kDatasetTooSmall, "dataset cannot supply " + std::to_string(wanted) +
                                                 " distinct units per batch");
  }
  const std::vector<std::size_t> picks = sampler.next();
  Batch batch;
  for (std::size_t i : picks) batch.factual.push_back(&dataset[i].anchor);
  const std::size_t shared = std::min(wanted, picks.size());
  for (std::size_t i = 0; i < shared; ++i) batch.units.push_back({&dataset[picks[i]], i});

  if (wanted > picks.size()) {
    std::set<std::size_t> used(picks.begin(), picks.end());
    while (batch.units.size() < wanted) {
      const std::size_t cand = sampler.rng().uniform_index(dataset.size());
      if (used.insert(cand).second) batch.units.push_back({&dataset[cand], std::nullopt});
    }
  }
  return batch;
}

nlohmann::ordered_json to_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["total"] = r.total;
  j["align"] = r.align;
  j["csd"] = r.csd;
  j["fcd"] = r.fcd;
  j["grad_norm"] = r.grad_norm;
  j["temperature"] = r.temperature;
  return j;
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const EncoderDims& dims,
                  const EvalHook& eval) {
  Prng init_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(SeedStream::kInit)));
  return train_from(dataset, cfg, init_params(init_rng, dims), eval);
}

TrainResult train_from(const Dataset& dataset, const TrainConfig& cfg, EncoderParams params,
                       const EvalHook& eval) {
  validate(cfg);
  BatchSampler sampler(dataset.size(), cfg.batch_size,
                       mix_seed(cfg.seed, static_cast<std::uint64_t>(SeedStream::kSampler)));
  Prng dropout_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(SeedStream::kDropout)));
  LossOptions options;
  options.learnable_temperature = cfg.learnable_temperature;
  if (cfg.dropout > 0.0) options.dropout = {cfg.dropout, &dropout_rng};

  OptimizerState state = OptimizerState::for_params(params);
  TrainResult result;
  result.steps.reserve(cfg.steps);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = assemble_batch(dataset, cfg, sampler);
    LossReport report;
    try {
      report = total_loss(batch, params, cfg.loss, options);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNonFinite) throw;
      throw Error(ErrorKind::kNonFinite, "training diverged at step " + std::to_string(step) +
                                             " (temperature " +
                                             std::to_string(params.temperature()) + ")");
    }
    const double norm = clip_grads(report.grads, cfg.clip_norm);
    const double lr = lr_at(step, cfg);
    adamw_step(params, report.grads, state, lr, cfg);

    StepRecord rec{step, lr, report.total, report.align, report.csd,
                   report.fcd, norm, params.temperature()};
    result.steps.push_back(rec);
    result.metrics.push_back(to_json(rec));
    if (eval && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps)) {
      nlohmann::ordered_json snap;
      snap["step"] = step;
      snap["eval"] = eval(params, step);
      result.metrics.push_back(std::move(snap));
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace cflab
