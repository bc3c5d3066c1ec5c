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

// Evaluation over the synthetic world: forced-choice replace tasks,
// cross-modal retrieval, zero-shot category classification, an object
// presence probe, margin statistics and multi-seed aggregation.

#ifndef CFLAB_EVAL_HPP_
#define CFLAB_EVAL_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cflab/counterfactuals.hpp"
#include "cflab/encoders.hpp"
#include "cflab/world.hpp"
#include "json.hpp"

namespace cflab {

/// Caption tokens plus the symbolic facts they describe. Learned encoders
/// read only the tokens; the fact oracle reads only the facts.
struct TextSample {
  Vector tokens;
  Vector facts;
};

TextSample caption_sample(const Scene& scene);
TextSample category_prompt_sample(Category category);

class EmbeddingModel {
 public:
  virtual ~EmbeddingModel() = default;
  virtual Vector embed_image(std::span<const double> features) const = 0;
  virtual Vector embed_text(const TextSample& text) const = 0;
};

class LearnedModel final : public EmbeddingModel {
 public:
  explicit LearnedModel(const EncoderParams& params) : params_(params) {}
  Vector embed_image(std::span<const double> features) const override;
  Vector embed_text(const TextSample& text) const override;

 private:
  const EncoderParams& params_;
};

/// Ground-truth scorer: cosine between the image feature vector and the fact
/// vector behind the text. Exact at sigma = 0.
class FactOracle final : public EmbeddingModel {
 public:
  Vector embed_image(std::span<const double> features) const override;
  Vector embed_text(const TextSample& text) const override;
};

struct ReplaceResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // scenes without a legal edit of the kind
};

/// For each scene: render its image and check S(I, T_true) > S(I, T_edit),
/// where T_edit captions a single-edit variant. Ties count as wrong.
/// Throws ErrorKind::kEmptyEvalSet when no scene can be evaluated.
ReplaceResult replace_accuracy(const EmbeddingModel& model, std::span<const Scene> scenes,
                               EditKind kind, Prng& rng, double sigma);

struct RecallResult {
  double image_to_text = 0.0;
  double text_to_image = 0.0;
};

/// Rank of the true partner among all candidates; equal scores rank by
/// candidate index.
RecallResult recall_at_k(std::span<const Vector> image_embeddings,
                         std::span<const Vector> text_embeddings, std::size_t k);
RecallResult recall_at_k(const EmbeddingModel& model, std::span<const Vector> images,
                         std::span<const TextSample> texts, std::size_t k);

inline constexpr std::size_t kTop5MinClasses = 6;

struct ZeroShotResult {
  double top1 = 0.0;
  // Empty (degenerate) unless there are more than kTop5MinClasses classes; with
  // six classes a random guess already lands in the top five 5/6 of the time.
  std::optional<double> top5;
};

ZeroShotResult zero_shot_classify(const EmbeddingModel& model, std::span<const Vector> images,
                                  std::span<const Category> labels,
                                  std::span<const Category> classes);

struct ProbeResult {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  std::size_t queries = 0;
};

/// Binary presence queries "a {category}" per image: every present category
/// plus as many absent ones. The decision threshold maximizes F1 on the
/// validation scenes and is then applied to the test scenes.
ProbeResult hallucination_probe(const EmbeddingModel& model, std::span<const Scene> test,
                                std::span<const Scene> validation, Prng& rng, double sigma);

struct MarginResult {
  double strict = 0.0;     // S(I_a, T_a) > max_j S(I_edit_j, T_a)
  double with_margin = 0.0;  // ... by at least m2
  std::size_t units = 0;
};

MarginResult margin_stats(const EmbeddingModel& model, std::span<const CounterfactualUnit> units,
                          double m2);

/// Metric name -> value for a single run, in fixed key order.
using RunMetrics = std::map<std::string, double>;

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};

struct EvalReport {
  std::map<std::string, MetricSummary> metrics;
};

/// Per-metric mean and population std. Throws ErrorKind::kKeyMismatch when
/// runs disagree on metric names and ErrorKind::kEmptyEvalSet on no runs.
EvalReport aggregate_seeds(std::span<const RunMetrics> runs);

nlohmann::ordered_json to_json(const RunMetrics& metrics);
nlohmann::ordered_json to_json(const EvalReport& report);
/// Columns: metric,mean,std,n_seeds
std::string to_csv(const EvalReport& report);

struct EvalSuiteConfig {
  std::size_t replace_scenes = 1000;
  std::size_t retrieval_pairs = 100;
  std::size_t zeroshot_images = 300;
  std::size_t probe_test_scenes = 200;
  std::size_t probe_validation_scenes = 200;
  std::size_t margin_units = 300;
  std::size_t margin_edited = 4;
  double sigma = kDefaultImageNoise;
  double m2 = 0.30;
  SceneCaps caps;
  bool operator==(const EvalSuiteConfig&) const = default;
};

/// Runs every evaluation on sets drawn from seed. Keys:
///   replace_{attribute,object,relation,location}, replace_{obj,attr,rel,avg},
///   recall_{i2t,t2i}@{1,5,10}, zeroshot_top1,
///   probe_{accuracy,precision,recall,f1}, margin_{strict,m2}.
/// replace_rel pools relation and location trials; replace_avg is the mean of
/// obj, attr and rel.
RunMetrics evaluate_suite(const EmbeddingModel& model, const EvalSuiteConfig& cfg,
                          std::uint64_t seed);

}  // namespace cflab

#endif  // CFLAB_EVAL_HPP_
