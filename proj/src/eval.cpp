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

#include "cflab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace cflab {

TextSample caption_sample(const Scene& scene) {
  return {render_caption(scene), fact_vector(scene)};
}

TextSample category_prompt_sample(Category category) {
  return {render_category_prompt(category), category_fact_mask(category)};
}

Vector LearnedModel::embed_image(std::span<const double> features) const {
  return encode_image(params_, features).embedding;
}

Vector LearnedModel::embed_text(const TextSample& text) const {
  return encode_text(params_, text.tokens).embedding;
}

Vector FactOracle::embed_image(std::span<const double> features) const {
  return l2_normalize(features);
}

Vector FactOracle::embed_text(const TextSample& text) const { return l2_normalize(text.facts); }

ReplaceResult replace_accuracy(const EmbeddingModel& model, std::span<const Scene> scenes,
                               EditKind kind, Prng& rng, double sigma) {
  ReplaceResult r;
  for (const Scene& scene : scenes) {
    if (!admits_edit(scene, kind)) {
      ++r.skipped;
      continue;
    }
    const Scene edited = apply_edit(scene, kind, rng);
    const Vector image = model.embed_image(render_image(scene, rng, sigma));
    const double s_true = dot(image, model.embed_text(caption_sample(scene)));
    const double s_edit = dot(image, model.embed_text(caption_sample(edited)));
    r.correct += s_true > s_edit ? 1 : 0;
    ++r.evaluated;
  }
  if (r.evaluated == 0) {
    throw Error(ErrorKind::kEmptyEvalSet,
                "no scene admits a " + std::string(name_of(kind)) + " edit");
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.evaluated);
  return r;
}

namespace {

// Position of candidate `truth` when candidates are ordered by descending
// score, ties by ascending index.
std::size_t rank_of(std::span<const double> scores, std::size_t truth) {
  std::size_t rank = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > scores[truth] || (scores[c] == scores[truth] && c < truth)) ++rank;
  }
  return rank;
}

}  // namespace

RecallResult recall_at_k(std::span<const Vector> image_embeddings,
                         std::span<const Vector> text_embeddings, std::size_t k) {
  const std::size_t n = image_embeddings.size();
  if (n == 0 || text_embeddings.size() != n) {
    throw Error(ErrorKind::kEmptyEvalSet, "recall needs matching non-empty image/text sets");
  }
  if (k == 0 || k > n) {
    throw Error(ErrorKind::kKTooLarge,
                "k = " + std::to_string(k) + " with " + std::to_string(n) + " candidates");
  }
  Matrix sim(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) sim(a, b) = dot(image_embeddings[a], text_embeddings[b]);
  }
  std::size_t hits_i2t = 0, hits_t2i = 0;
  Vector column(n);
  for (std::size_t q = 0; q < n; ++q) {
    hits_i2t += rank_of(sim.row(q), q) < k ? 1 : 0;
    for (std::size_t a = 0; a < n; ++a) column[a] = sim(a, q);
    hits_t2i += rank_of(column, q) < k ? 1 : 0;
  }
  return {static_cast<double>(hits_i2t) / static_cast<double>(n),
          static_cast<double>(hits_t2i) / static_cast<double>(n)};
}

RecallResult recall_at_k(const EmbeddingModel& model, std::span<const Vector> images,
                         std::span<const TextSample> texts, std::size_t k) {
  std::vector<Vector> ei, et;
  for (const Vector& x : images) ei.push_back(model.embed_image(x));
  for (const TextSample& t : texts) et.push_back(model.embed_text(t));
  return recall_at_k(ei, et, k);
}

ZeroShotResult zero_shot_classify(const EmbeddingModel& model, std::span<const Vector> images,
                                  std::span<const Category> labels,
                                  std::span<const Category> classes) {
  if (classes.size() < 2) throw Error(ErrorKind::kInvalidConfig, "zero-shot needs >= 2 classes");
  if (images.empty() || labels.size() != images.size()) {
    throw Error(ErrorKind::kEmptyEvalSet, "zero-shot needs labelled images");
  }
  std::vector<Vector> prompts;
  for (Category c : classes) prompts.push_back(model.embed_text(category_prompt_sample(c)));
  std::size_t top1 = 0, top5 = 0;
  Vector scores(classes.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto truth = std::find(classes.begin(), classes.end(), labels[i]);
    if (truth == classes.end()) {
      throw Error(ErrorKind::kInvalidConfig, "image label missing from the class list");
    }
    const Vector e = model.embed_image(images[i]);
    for (std::size_t c = 0; c < classes.size(); ++c) scores[c] = dot(e, prompts[c]);
    const std::size_t rank = rank_of(scores, static_cast<std::size_t>(truth - classes.begin()));
    top1 += rank < 1 ? 1 : 0;
    top5 += rank < 5 ? 1 : 0;
  }
  ZeroShotResult r;
  const double n = static_cast<double>(images.size());
  r.top1 = static_cast<double>(top1) / n;
  if (classes.size() > kTop5MinClasses) r.top5 = static_cast<double>(top5) / n;
  return r;
}

namespace {

struct Query {
  double score;
  bool present;
};

std::vector<Query> presence_queries(const EmbeddingModel& model, std::span<const Scene> scenes,
                                    Prng& rng, double sigma) {
  std::vector<Vector> prompts;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    prompts.push_back(model.embed_text(category_prompt_sample(Category(c))));
  }
  std::vector<Query> queries;
  for (const Scene& scene : scenes) {
    const Vector e = model.embed_image(render_image(scene, rng, sigma));
    std::vector<std::size_t> absent;
    for (std::size_t c = 0; c < kNumCategories; ++c) {
      const bool present = std::any_of(scene.objects.begin(), scene.objects.end(),
                                       [&](const Object& o) { return o.category == Category(c); });
      if (present) {
        queries.push_back({dot(e, prompts[c]), true});
      } else {
        absent.push_back(c);
      }
    }
    rng.shuffle(absent);
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      queries.push_back({dot(e, prompts[absent[i]]), false});
    }
  }
  return queries;
}

ProbeResult score_probe(std::span<const Query> queries, double threshold) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const Query& q : queries) {
    const bool says_present = q.score > threshold;
    if (says_present) {
      (q.present ? tp : fp) += 1;
    } else {
      (q.present ? fn : tn) += 1;
    }
  }
  ProbeResult r;
  r.threshold = threshold;
  r.queries = queries.size();
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(queries.size());
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

}  // namespace

ProbeResult hallucination_probe(const EmbeddingModel& model, std::span<const Scene> test,
                                std::span<const Scene> validation, Prng& rng, double sigma) {
  const std::vector<Query> val = presence_queries(model, validation, rng, sigma);
  const std::vector<Query> tst = presence_queries(model, test, rng, sigma);
  if (val.empty() || tst.empty()) {
    throw Error(ErrorKind::kEmptyEvalSet, "probe needs validation and test queries");
  }

  std::vector<double> scores;
  for (const Query& q : val) scores.push_back(q.score);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> candidates{scores.front() - 1.0};
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
  }
  candidates.push_back(scores.back());

  double best_threshold = candidates.front();
  double best_f1 = -1.0;
  for (double t : candidates) {
    const double f1 = score_probe(val, t).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_threshold = t;
    }
  }
  return score_probe(tst, best_threshold);
}

MarginResult margin_stats(const EmbeddingModel& model, std::span<const CounterfactualUnit> units,
                          double m2) {
  MarginResult r;
  std::size_t strict = 0, with_margin = 0;
  for (const CounterfactualUnit& unit : units) {
    if (unit.edited.empty()) continue;
    const Vector et = model.embed_text(caption_sample(unit.anchor_scene));
    const double s_anchor = dot(model.embed_image(unit.anchor.image), et);
    double hardest = -std::numeric_limits<double>::infinity();
    for (const EditedImage& ed : unit.edited) {
      hardest = std::max(hardest, dot(model.embed_image(ed.image), et));
    }
    strict += s_anchor > hardest ? 1 : 0;
    with_margin += s_anchor - hardest >= m2 ? 1 : 0;
    ++r.units;
  }
  if (r.units == 0) throw Error(ErrorKind::kEmptyEvalSet, "margin_stats needs units with J >= 1");
  r.strict = static_cast<double>(strict) / static_cast<double>(r.units);
  r.with_margin = static_cast<double>(with_margin) / static_cast<double>(r.units);
  return r;
}

EvalReport aggregate_seeds(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw Error(ErrorKind::kEmptyEvalSet, "no reports to aggregate");
  for (const RunMetrics& run : runs) {
    bool same = run.size() == runs[0].size() &&
                std::equal(run.begin(), run.end(), runs[0].begin(),
                           [](const auto& a, const auto& b) { return a.first == b.first; });
    if (!same) throw Error(ErrorKind::kKeyMismatch, "reports carry different metric keys");
  }
  EvalReport report;
  const double n = static_cast<double>(runs.size());
  for (const auto& [key, unused] : runs[0]) {
    double mean = 0.0;
    for (const RunMetrics& run : runs) mean += run.at(key);
    mean /= n;
    double var = 0.0;
    for (const RunMetrics& run : runs) {
      const double d = run.at(key) - mean;
      var += d * d;
    }
    report.metrics[key] = {mean, std::sqrt(var / n), runs.size()};
  }
  return report;
}

nlohmann::ordered_json to_json(const RunMetrics& metrics) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [key, value] : metrics) j[key] = value;
  return j;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [key, m] : report.metrics) {
    j[key] = {{"mean", m.mean}, {"std", m.std}, {"n_seeds", m.n}};
  }
  return j;
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "metric,mean,std,n_seeds\n";
  out << std::setprecision(17);
  for (const auto& [key, m] : report.metrics) {
    out << key << ',' << m.mean << ',' << m.std << ',' << m.n << '\n';
  }
  return out.str();
}

namespace {

enum class EvalStream : std::uint64_t {
  kReplace = 11,
  kRetrieval = 12,
  kZeroShot = 13,
  kProbe = 14,
  kMargin = 15,
};

Prng stream_rng(std::uint64_t seed, EvalStream s) {
  return Prng(mix_seed(seed, static_cast<std::uint64_t>(s)));
}

}  // namespace

RunMetrics evaluate_suite(const EmbeddingModel& model, const EvalSuiteConfig& cfg,
                          std::uint64_t seed) {
  RunMetrics m;

  {
    Prng rng = stream_rng(seed, EvalStream::kReplace);
    std::vector<Scene> scenes;
    for (std::size_t i = 0; i < cfg.replace_scenes; ++i) {
      scenes.push_back(sample_scene(rng, cfg.caps));
    }
    std::map<EditKind, ReplaceResult> by_kind;
    for (EditKind kind : kAllEditKinds) {
      by_kind[kind] = replace_accuracy(model, scenes, kind, rng, cfg.sigma);
      m["replace_" + std::string(name_of(kind))] = by_kind[kind].accuracy;
    }
    const ReplaceResult& rel = by_kind[EditKind::kRelation];
    const ReplaceResult& loc = by_kind[EditKind::kLocation];
    m["replace_obj"] = by_kind[EditKind::kObjectCategory].accuracy;
    m["replace_attr"] = by_kind[EditKind::kAttribute].accuracy;
    m["replace_rel"] = static_cast<double>(rel.correct + loc.correct) /
                       static_cast<double>(rel.evaluated + loc.evaluated);
    m["replace_avg"] = (m["replace_obj"] + m["replace_attr"] + m["replace_rel"]) / 3.0;
  }

  {
    Prng rng = stream_rng(seed, EvalStream::kRetrieval);
    std::vector<Vector> images;
    std::vector<TextSample> texts;
    for (std::size_t i = 0; i < cfg.retrieval_pairs; ++i) {
      const Scene s = sample_scene(rng, cfg.caps);
      images.push_back(render_image(s, rng, cfg.sigma));
      texts.push_back(caption_sample(s));
    }
    std::vector<Vector> ei, et;
    for (const Vector& x : images) ei.push_back(model.embed_image(x));
    for (const TextSample& t : texts) et.push_back(model.embed_text(t));
    for (std::size_t k : {1u, 5u, 10u}) {
      if (k > ei.size()) continue;
      const RecallResult r = recall_at_k(ei, et, k);
      m["recall_i2t@" + std::to_string(k)] = r.image_to_text;
      m["recall_t2i@" + std::to_string(k)] = r.text_to_image;
    }
  }

  {
    Prng rng = stream_rng(seed, EvalStream::kZeroShot);
    std::vector<Vector> images;
    std::vector<Category> labels;
    for (std::size_t i = 0; i < cfg.zeroshot_images; ++i) {
      Scene s = sample_scene(rng, cfg.caps);
      s.objects.resize(1);
      s.relations.clear();
      labels.push_back(s.objects[0].category);
      images.push_back(render_image(s, rng, cfg.sigma));
    }
    std::vector<Category> classes;
    for (std::size_t c = 0; c < kNumCategories; ++c) classes.push_back(Category(c));
    m["zeroshot_top1"] = zero_shot_classify(model, images, labels, classes).top1;
  }

  {
    Prng rng = stream_rng(seed, EvalStream::kProbe);
    std::vector<Scene> val, test;
    for (std::size_t i = 0; i < cfg.probe_validation_scenes; ++i) {
      val.push_back(sample_scene(rng, cfg.caps));
    }
    for (std::size_t i = 0; i < cfg.probe_test_scenes; ++i) {
      test.push_back(sample_scene(rng, cfg.caps));
    }
    const ProbeResult p = hallucination_probe(model, test, val, rng, cfg.sigma);
    m["probe_accuracy"] = p.accuracy;
    m["probe_precision"] = p.precision;
    m["probe_recall"] = p.recall;
    m["probe_f1"] = p.f1;
  }

  {
    Prng rng = stream_rng(seed, EvalStream::kMargin);
    UnitSpec spec;
    spec.num_complete = 0;
    spec.num_edited = cfg.margin_edited;
    spec.sigma = cfg.sigma;
    std::vector<CounterfactualUnit> units;
    for (std::size_t i = 0; i < cfg.margin_units; ++i) {
      units.push_back(assemble_unit(sample_scene(rng, cfg.caps), spec, rng));
    }
    const MarginResult r = margin_stats(model, units, cfg.m2);
    m["margin_strict"] = r.strict;
    m["margin_m2"] = r.with_margin;
  }
  return m;
}

}  // namespace cflab
