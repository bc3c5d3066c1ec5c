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

#include "cflab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cflab {

void validate(const LossConfig& cfg) {
  for (double v : {cfg.alpha, cfg.beta, cfg.gamma, cfg.m1, cfg.m2}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::kInvalidConfig, "loss weights and margins must be finite and >= 0");
    }
  }
}

AlignLoss align_loss(std::span<const Vector> e_image, std::span<const Vector> e_text, double tau) {
  const std::size_t n = e_image.size();
  if (n == 0 || e_text.size() != n) {
    throw Error(ErrorKind::kShapeMismatch, "align_loss needs N >= 1 image/text pairs");
  }
  if (!(tau > 0.0)) throw Error(ErrorKind::kInvalidConfig, "temperature must be positive");

  Matrix sim(n, n);
  Matrix logits(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      sim(a, b) = similarity(e_image[a], e_text[b]);
      logits(a, b) = sim(a, b) / tau;
    }
  }

  // Row softmax: image a over texts. Column softmax: text b over images.
  Matrix row_p(n, n);
  Matrix col_p(n, n);
  double value = 0.0;
  Vector column(n);
  for (std::size_t a = 0; a < n; ++a) {
    const Vector p = softmax_row(logits.row(a));
    std::copy(p.begin(), p.end(), row_p.row(a).begin());
    value -= logits(a, a) - log_sum_exp(logits.row(a));
  }
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t a = 0; a < n; ++a) column[a] = logits(a, b);
    const Vector p = softmax_row(column);
    for (std::size_t a = 0; a < n; ++a) col_p(a, b) = p[a];
    value -= logits(b, b) - log_sum_exp(column);
  }
  value /= 2.0 * static_cast<double>(n);

  AlignLoss out;
  out.value = value;
  out.d_image.assign(n, Vector(e_text[0].size(), 0.0));
  out.d_text.assign(n, Vector(e_image[0].size(), 0.0));
  const double scale = 1.0 / (2.0 * static_cast<double>(n) * tau);
  double sum_gs = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double g = scale * (row_p(a, b) + col_p(a, b) - (a == b ? 2.0 : 0.0));
      sum_gs += g * sim(a, b);
      axpy(g, e_text[b], out.d_image[a]);
      axpy(g, e_image[a], out.d_text[b]);
    }
  }
  out.d_tau = -sum_gs / tau;
  return out;
}

HingeLoss csd_loss(double s_anchor, std::span<const double> s_cf, double m1) {
  if (s_cf.empty()) {
    throw Error(ErrorKind::kEmptyCounterfactuals, "csd_loss needs K >= 1 counterfactual pairs");
  }
  const double inv_k = 1.0 / static_cast<double>(s_cf.size());
  HingeLoss out;
  out.d_negatives.assign(s_cf.size(), 0.0);
  for (std::size_t k = 0; k < s_cf.size(); ++k) {
    const double arg = s_cf[k] - s_anchor + m1;
    if (arg > 0.0) {
      out.value += arg;
      out.d_negatives[k] = inv_k;
      out.d_anchor -= inv_k;
    }
  }
  out.value *= inv_k;
  return out;
}

HingeLoss fcd_loss(double s_anchor, std::span<const double> s_edit, double m2) {
  if (s_edit.empty()) {
    throw Error(ErrorKind::kEmptyCounterfactuals, "fcd_loss needs J >= 1 edited images");
  }
  std::size_t hard = 0;
  for (std::size_t j = 1; j < s_edit.size(); ++j) {
    if (s_edit[j] > s_edit[hard]) hard = j;
  }
  HingeLoss out;
  out.hard_index = hard;
  out.d_negatives.assign(s_edit.size(), 0.0);
  const double arg = s_edit[hard] - s_anchor + m2;
  if (arg > 0.0) {
    out.value = arg;
    out.d_anchor = -1.0;
    out.d_negatives[hard] = 1.0;
  }
  return out;
}

namespace {

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void digest_mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v;
  h *= kFnvPrime;
}

// Encodings and their upstream gradients, addressed by slot.
class Tape {
 public:
  Tape(const EncoderParams& params, const Dropout& dropout) : params_(params), dropout_(dropout) {}

  std::size_t push(Branch branch, std::span<const double> input) {
    encodings_.push_back(encode(params_, branch, input, dropout_));
    upstream_.emplace_back(encodings_.back().embedding.size(), 0.0);
    return encodings_.size() - 1;
  }
  const Vector& embedding(std::size_t slot) const { return encodings_[slot].embedding; }
  std::span<double> upstream(std::size_t slot) { return upstream_[slot]; }

  // d S(x, y) / d e_x = e_y, and symmetrically.
  void add_similarity_grad(std::size_t image_slot, std::size_t text_slot, double weight) {
    if (weight == 0.0) return;
    axpy(weight, embedding(text_slot), upstream(image_slot));
    axpy(weight, embedding(image_slot), upstream(text_slot));
  }

  const std::vector<Encoding>& encodings() const { return encodings_; }
  const std::vector<Vector>& upstreams() const { return upstream_; }

 private:
  const EncoderParams& params_;
  Dropout dropout_;
  std::vector<Encoding> encodings_;
  std::vector<Vector> upstream_;
};

}  // namespace

LossReport total_loss(const Batch& batch, const EncoderParams& params, const LossConfig& cfg,
                      const LossOptions& options) {
  validate(cfg);
  const std::size_t n = batch.factual.size();
  if (n == 0) throw Error(ErrorKind::kDatasetTooSmall, "total_loss needs a factual batch");

  Tape tape(params, options.dropout);
  std::vector<std::size_t> fact_image(n), fact_text(n);
  for (std::size_t i = 0; i < n; ++i) {
    fact_image[i] = tape.push(Branch::kImage, batch.factual[i]->image);
    fact_text[i] = tape.push(Branch::kText, batch.factual[i]->caption);
  }

  LossReport report;
  report.boundary_gap = std::numeric_limits<double>::infinity();
  std::uint64_t digest = 0xcbf29ce484222325ULL;

  // Alignment.
  {
    std::vector<Vector> ei, et;
    ei.reserve(n);
    et.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      ei.push_back(tape.embedding(fact_image[i]));
      et.push_back(tape.embedding(fact_text[i]));
    }
    const AlignLoss align = align_loss(ei, et, params.temperature());
    report.align = align.value;
    if (cfg.alpha != 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        axpy(cfg.alpha, align.d_image[i], tape.upstream(fact_image[i]));
        axpy(cfg.alpha, align.d_text[i], tape.upstream(fact_text[i]));
      }
      report.d_tau = cfg.alpha * align.d_tau;
    }
  }

  std::size_t n_csd = 0, n_fcd = 0;
  for (const UnitRef& ref : batch.units) {
    n_csd += ref.unit->complete.empty() ? 0 : 1;
    n_fcd += ref.unit->edited.empty() ? 0 : 1;
  }

  report.hard_negative_index.reserve(batch.units.size());
  for (const UnitRef& ref : batch.units) {
    const CounterfactualUnit& unit = *ref.unit;
    std::size_t anchor_image, anchor_text;
    if (ref.factual_index) {
      if (*ref.factual_index >= n) {
        throw Error(ErrorKind::kShapeMismatch, "unit anchor index outside the factual batch");
      }
      anchor_image = fact_image[*ref.factual_index];
      anchor_text = fact_text[*ref.factual_index];
    } else {
      anchor_image = tape.push(Branch::kImage, unit.anchor.image);
      anchor_text = tape.push(Branch::kText, unit.anchor.caption);
    }
    const double s_anchor = similarity(tape.embedding(anchor_image), tape.embedding(anchor_text));

    if (!unit.complete.empty()) {
      std::vector<std::pair<std::size_t, std::size_t>> slots;
      std::vector<double> s_cf;
      for (const CompletePair& cp : unit.complete) {
        const std::size_t is = tape.push(Branch::kImage, cp.pair.image);
        const std::size_t ts = tape.push(Branch::kText, cp.pair.caption);
        slots.emplace_back(is, ts);
        s_cf.push_back(similarity(tape.embedding(is), tape.embedding(ts)));
      }
      const HingeLoss csd = csd_loss(s_anchor, s_cf, cfg.m1);
      report.csd += csd.value / static_cast<double>(n_csd);
      if (cfg.beta != 0.0) {
        const double w = cfg.beta / static_cast<double>(n_csd);
        tape.add_similarity_grad(anchor_image, anchor_text, w * csd.d_anchor);
        for (std::size_t k = 0; k < slots.size(); ++k) {
          tape.add_similarity_grad(slots[k].first, slots[k].second, w * csd.d_negatives[k]);
          const double arg = s_cf[k] - s_anchor + cfg.m1;
          report.boundary_gap = std::min(report.boundary_gap, std::abs(arg));
          digest_mix(digest, arg > 0.0 ? 3 : 5);
        }
      }
    }

    if (!unit.edited.empty()) {
      std::vector<std::size_t> slots;
      std::vector<double> s_edit;
      for (const EditedImage& ed : unit.edited) {
        const std::size_t is = tape.push(Branch::kImage, ed.image);
        slots.push_back(is);
        s_edit.push_back(similarity(tape.embedding(is), tape.embedding(anchor_text)));
      }
      const HingeLoss fcd = fcd_loss(s_anchor, s_edit, cfg.m2);
      report.fcd += fcd.value / static_cast<double>(n_fcd);
      report.hard_negative_index.push_back(fcd.hard_index);
      if (cfg.gamma != 0.0) {
        const double w = cfg.gamma / static_cast<double>(n_fcd);
        tape.add_similarity_grad(anchor_image, anchor_text, w * fcd.d_anchor);
        for (std::size_t j = 0; j < slots.size(); ++j) {
          tape.add_similarity_grad(slots[j], anchor_text, w * fcd.d_negatives[j]);
        }
        const std::size_t hard = *fcd.hard_index;
        const double arg = s_edit[hard] - s_anchor + cfg.m2;
        report.boundary_gap = std::min(report.boundary_gap, std::abs(arg));
        for (std::size_t j = 0; j < s_edit.size(); ++j) {
          if (j != hard) {
            report.boundary_gap = std::min(report.boundary_gap, s_edit[hard] - s_edit[j]);
          }
        }
        digest_mix(digest, arg > 0.0 ? 7 : 11);
        digest_mix(digest, hard);
      }
    } else {
      report.hard_negative_index.push_back(std::nullopt);
    }
  }

  report.total = weighted_total(cfg, report.align, report.csd, report.fcd);
  if (!std::isfinite(report.total)) {
    throw Error(ErrorKind::kNonFinite, "loss evaluated to a non-finite value");
  }

  for (const Encoding& enc : tape.encodings()) digest = activation_digest(enc, digest);
  report.pattern_digest = digest;

  report.grads = backward(params, tape.encodings(), tape.upstreams(),
                          options.learnable_temperature ? report.d_tau : 0.0);
  if (!options.learnable_temperature) report.d_tau = 0.0;
  return report;
}

}  // namespace cflab
