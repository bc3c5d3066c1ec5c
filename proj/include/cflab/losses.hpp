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

// Training objectives over unit-norm embeddings:
//
//   align : symmetric InfoNCE over N factual pairs at temperature tau,
//           -1/(2N) sum_i [log softmax_j(S_ij/tau)_i + log softmax_j(S_ji/tau)_i]
//   csd   : (1/K) sum_k max(0, S(I_cf_k, T_cf_k) - S(I_a, T_a) + m1)
//   fcd   : max(0, max_j S(I_edit_j, T_a) - S(I_a, T_a) + m2)
//   total : alpha * align + beta * csd + gamma * fcd
//
// Hinge arguments exactly at 0 count as inactive.

#ifndef CFLAB_LOSSES_HPP_
#define CFLAB_LOSSES_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cflab/counterfactuals.hpp"
#include "cflab/encoders.hpp"
#include "cflab/numerics.hpp"

namespace cflab {

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.45;
  double gamma = 0.55;
  double m1 = 0.25;
  double m2 = 0.30;
  bool operator==(const LossConfig&) const = default;
};

/// Throws ErrorKind::kInvalidConfig on a negative entry.
void validate(const LossConfig& cfg);

inline double weighted_total(const LossConfig& cfg, double align, double csd, double fcd) {
  return cfg.alpha * align + cfg.beta * csd + cfg.gamma * fcd;
}

inline double similarity(std::span<const double> e_image, std::span<const double> e_text) {
  return dot(e_image, e_text);
}

struct AlignLoss {
  double value = 0.0;
  std::vector<Vector> d_image;
  std::vector<Vector> d_text;
  double d_tau = 0.0;
};

AlignLoss align_loss(std::span<const Vector> e_image, std::span<const Vector> e_text, double tau);

struct HingeLoss {
  double value = 0.0;
  double d_anchor = 0.0;
  std::vector<double> d_negatives;
  std::optional<std::size_t> hard_index;  // set by fcd_loss only
};

/// Throws ErrorKind::kEmptyCounterfactuals when s_cf is empty.
HingeLoss csd_loss(double s_anchor, std::span<const double> s_cf, double m1);

/// Hard negative = argmax of s_edit, lowest index on ties; only it (and the
/// anchor) receive subgradient. Throws ErrorKind::kEmptyCounterfactuals.
HingeLoss fcd_loss(double s_anchor, std::span<const double> s_edit, double m2);

/// A counterfactual unit in a batch. When factual_index is set, the unit's
/// anchor is that factual pair and shares its embeddings.
struct UnitRef {
  const CounterfactualUnit* unit = nullptr;
  std::optional<std::size_t> factual_index;
};

struct Batch {
  std::vector<const ImageTextPair*> factual;
  std::vector<UnitRef> units;
};

struct LossReport {
  double total = 0.0;
  double align = 0.0;
  double csd = 0.0;
  double fcd = 0.0;
  std::vector<std::optional<std::size_t>> hard_negative_index;  // one per unit
  ParamGrads grads;
  double d_tau = 0.0;
  // Digest of every ReLU sign, active hinge term and fcd argmax: equal digests
  // mean the loss is evaluated on the same smooth piece.
  std::uint64_t pattern_digest = 0;
  // Distance from the nearest hinge boundary or fcd argmax tie.
  double boundary_gap = 0.0;
};

struct LossOptions {
  bool learnable_temperature = true;
  Dropout dropout;
};

/// Encodes every image and caption of the batch once, evaluates the three
/// objectives, and backpropagates the weighted sum into parameter gradients.
/// align runs over factual pairs only; csd (fcd) averages over the units with
/// K >= 1 (J >= 1). Objectives with zero weight are reported but not
/// backpropagated.
LossReport total_loss(const Batch& batch, const EncoderParams& params, const LossConfig& cfg,
                      const LossOptions& options = {});

}  // namespace cflab

#endif  // CFLAB_LOSSES_HPP_
