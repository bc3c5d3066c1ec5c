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

#include "cflab/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <utility>

namespace cflab {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void bad_config(const std::string& msg) {
  throw Error(ErrorKind::kInvalidConfig, msg);
}

const json& section(const json& root, const char* name,
                    std::initializer_list<std::string_view> keys) {
  static const json kEmpty = json::object();
  auto it = root.find(name);
  if (it == root.end()) return kEmpty;
  if (!it->is_object()) bad_config(std::string("'") + name + "' must be an object");
  for (auto k = it->begin(); k != it->end(); ++k) {
    if (std::find(keys.begin(), keys.end(), k.key()) == keys.end()) {
      bad_config("unknown config key '" + std::string(name) + "." + k.key() + "'");
    }
  }
  return *it;
}

std::string where(const char* sec, const char* key) { return std::string(sec) + "." + key; }

void read(const json& s, const char* sec, const char* key, double& out) {
  auto it = s.find(key);
  if (it == s.end()) return;
  if (!it->is_number()) bad_config(where(sec, key) + " must be a number");
  out = it->get<double>();
}

template <std::unsigned_integral T>
  requires(!std::same_as<T, bool>)
void read(const json& s, const char* sec, const char* key, T& out) {
  auto it = s.find(key);
  if (it == s.end()) return;
  if (!it->is_number_unsigned()) bad_config(where(sec, key) + " must be a non-negative integer");
  out = it->get<T>();
}

void read(const json& s, const char* sec, const char* key, bool& out) {
  auto it = s.find(key);
  if (it == s.end()) return;
  if (!it->is_boolean()) bad_config(where(sec, key) + " must be true or false");
  out = it->get<bool>();
}

void read(const json& s, const char* sec, const char* key, std::string& out) {
  auto it = s.find(key);
  if (it == s.end()) return;
  if (!it->is_string()) bad_config(where(sec, key) + " must be a string");
  out = it->get<std::string>();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "short write on '" + path + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

namespace {

// Strict key and type checks; value ranges are left to validate() so that
// overrides can pass through intermediate states.
ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) bad_config("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static constexpr std::array kTop{"world", "counterfactuals", "encoder", "train", "loss",
                                     "data",  "eval",            "seeds",   "out_dir"};
    if (std::find(kTop.begin(), kTop.end(), it.key()) == kTop.end()) {
      bad_config("unknown config key '" + it.key() + "'");
    }
  }
  ExperimentConfig c;

  const json& w = section(j, "world", {"sigma", "max_objects", "max_relations"});
  read(w, "world", "sigma", c.sigma);
  read(w, "world", "max_objects", c.caps.max_objects);
  read(w, "world", "max_relations", c.caps.max_relations);

  const json& cf = section(j, "counterfactuals", {"K", "J", "cf_ratio", "mode", "kind_mix"});
  read(cf, "counterfactuals", "K", c.num_complete);
  read(cf, "counterfactuals", "J", c.num_edited);
  read(cf, "counterfactuals", "cf_ratio", c.train.cf_ratio);
  if (cf.contains("mode")) {
    std::string mode;
    read(cf, "counterfactuals", "mode", mode);
    try {
      c.mode = parse_pair_mode(mode);
    } catch (const Error& e) {
      bad_config(e.what());
    }
  }
  if (cf.contains("kind_mix")) {
    const json& mix = section(cf, "kind_mix", {"attribute", "object", "relation", "location"});
    for (EditKind kind : kAllEditKinds) {
      const std::string name(name_of(kind));
      read(mix, "counterfactuals.kind_mix", name.c_str(),
           c.kind_mix.weights[static_cast<std::size_t>(kind)]);
    }
  }

  const json& enc = section(j, "encoder", {"hidden", "embed"});
  read(enc, "encoder", "hidden", c.hidden);
  read(enc, "encoder", "embed", c.embed);

  const json& t = section(j, "train", {"steps", "batch_size", "peak_lr", "lr_multiplier",
                                       "warmup_steps", "weight_decay", "adam_beta1", "adam_beta2",
                                       "adam_eps", "clip_norm", "eval_every",
                                       "learnable_temperature", "dropout", "grad_accumulation"});
  read(t, "train", "steps", c.train.steps);
  read(t, "train", "batch_size", c.train.batch_size);
  read(t, "train", "peak_lr", c.train.peak_lr);
  read(t, "train", "lr_multiplier", c.train.lr_multiplier);
  read(t, "train", "warmup_steps", c.train.warmup_steps);
  read(t, "train", "weight_decay", c.train.weight_decay);
  read(t, "train", "adam_beta1", c.train.adam_beta1);
  read(t, "train", "adam_beta2", c.train.adam_beta2);
  read(t, "train", "adam_eps", c.train.adam_eps);
  read(t, "train", "clip_norm", c.train.clip_norm);
  read(t, "train", "eval_every", c.train.eval_every);
  read(t, "train", "learnable_temperature", c.train.learnable_temperature);
  read(t, "train", "dropout", c.train.dropout);
  read(t, "train", "grad_accumulation", c.train.grad_accumulation);

  const json& l = section(j, "loss", {"alpha", "beta", "gamma", "m1", "m2"});
  read(l, "loss", "alpha", c.train.loss.alpha);
  read(l, "loss", "beta", c.train.loss.beta);
  read(l, "loss", "gamma", c.train.loss.gamma);
  read(l, "loss", "m1", c.train.loss.m1);
  read(l, "loss", "m2", c.train.loss.m2);

  const json& d = section(j, "data", {"train_units", "seed"});
  read(d, "data", "train_units", c.train_units);
  read(d, "data", "seed", c.data_seed);

  const json& e = section(j, "eval", {"replace_scenes", "retrieval_pairs", "zeroshot_images",
                                      "probe_test_scenes", "probe_validation_scenes",
                                      "margin_units", "margin_edited", "seed"});
  read(e, "eval", "replace_scenes", c.eval.replace_scenes);
  read(e, "eval", "retrieval_pairs", c.eval.retrieval_pairs);
  read(e, "eval", "zeroshot_images", c.eval.zeroshot_images);
  read(e, "eval", "probe_test_scenes", c.eval.probe_test_scenes);
  read(e, "eval", "probe_validation_scenes", c.eval.probe_validation_scenes);
  read(e, "eval", "margin_units", c.eval.margin_units);
  read(e, "eval", "margin_edited", c.eval.margin_edited);
  read(e, "eval", "seed", c.eval_seed);

  if (auto it = j.find("seeds"); it != j.end()) {
    if (!it->is_array()) bad_config("seeds must be an array of non-negative integers");
    c.seeds.clear();
    for (const json& s : *it) {
      if (!s.is_number_unsigned()) bad_config("seeds must be an array of non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (auto it = j.find("out_dir"); it != j.end()) {
    if (!it->is_string()) bad_config("out_dir must be a string");
    c.out_dir = it->get<std::string>();
  }
  // Derived, not separately configurable.
  c.eval.sigma = c.sigma;
  c.eval.m2 = c.train.loss.m2;
  c.eval.caps = c.caps;
  return c;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = parse_config(j);
  validate(c);
  return c;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["world"] = {{"sigma", c.sigma},
                {"max_objects", c.caps.max_objects},
                {"max_relations", c.caps.max_relations}};
  ordered_json mix;
  for (EditKind kind : kAllEditKinds) mix[std::string(name_of(kind))] = c.kind_mix.weight(kind);
  j["counterfactuals"] = {{"K", c.num_complete},
                          {"J", c.num_edited},
                          {"cf_ratio", c.train.cf_ratio},
                          {"mode", name_of(c.mode)},
                          {"kind_mix", mix}};
  j["encoder"] = {{"hidden", c.hidden}, {"embed", c.embed}};
  const TrainConfig& t = c.train;
  j["train"] = {{"steps", t.steps},
                {"batch_size", t.batch_size},
                {"peak_lr", t.peak_lr},
                {"lr_multiplier", t.lr_multiplier},
                {"warmup_steps", t.warmup_steps},
                {"weight_decay", t.weight_decay},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"clip_norm", t.clip_norm},
                {"eval_every", t.eval_every},
                {"learnable_temperature", t.learnable_temperature},
                {"dropout", t.dropout},
                {"grad_accumulation", t.grad_accumulation}};
  j["loss"] = {{"alpha", t.loss.alpha},
               {"beta", t.loss.beta},
               {"gamma", t.loss.gamma},
               {"m1", t.loss.m1},
               {"m2", t.loss.m2}};
  j["data"] = {{"train_units", c.train_units}, {"seed", c.data_seed}};
  j["eval"] = {{"replace_scenes", c.eval.replace_scenes},
               {"retrieval_pairs", c.eval.retrieval_pairs},
               {"zeroshot_images", c.eval.zeroshot_images},
               {"probe_test_scenes", c.eval.probe_test_scenes},
               {"probe_validation_scenes", c.eval.probe_validation_scenes},
               {"margin_units", c.eval.margin_units},
               {"margin_edited", c.eval.margin_edited},
               {"seed", c.eval_seed}};
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) bad_config("config '" + path + "' is not valid JSON");
  return config_from_json(j);
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    bad_config("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  json j = to_json(cfg);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) bad_config("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      if (!node->is_object() || !node->contains(part)) {
        bad_config("unknown config key '" + key + "'");
      }
      (*node)[part] = value;
      break;
    }
    if (!node->is_object() || !node->contains(part) || !(*node)[part].is_object()) {
      bad_config("unknown config key '" + key + "'");
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  cfg = parse_config(j);
}

void validate(const ExperimentConfig& c) {
  if (!(c.sigma >= 0.0) || !std::isfinite(c.sigma)) bad_config("world.sigma must be >= 0");
  validate(c.caps);
  if (c.num_complete + c.num_edited == 0) bad_config("counterfactuals.K + J must be >= 1");
  double mix_total = 0.0;
  for (double w : c.kind_mix.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) bad_config("kind_mix weights must be finite and >= 0");
    mix_total += w;
  }
  if (mix_total <= 0.0) bad_config("kind_mix needs a positive weight");
  if (c.hidden < 1) bad_config("encoder.hidden must be >= 1");
  if (c.embed < 2) bad_config("encoder.embed must be >= 2");
  validate(c.train);
  if (c.train_units < c.train.batch_size) {
    bad_config("data.train_units must be >= train.batch_size");
  }
  if (c.eval.replace_scenes < 1 || c.eval.retrieval_pairs < 1 || c.eval.zeroshot_images < 1 ||
      c.eval.probe_test_scenes < 1 || c.eval.probe_validation_scenes < 1 ||
      c.eval.margin_units < 1 || c.eval.margin_edited < 1) {
    bad_config("eval set sizes must be >= 1");
  }
  if (c.seeds.empty()) bad_config("seeds must not be empty");
}

UnitSpec unit_spec(const ExperimentConfig& cfg) {
  UnitSpec s;
  s.num_complete = cfg.num_complete;
  s.num_edited = cfg.num_edited;
  s.kind_mix = cfg.kind_mix;
  s.sigma = cfg.sigma;
  s.mode = cfg.mode;
  return s;
}

EncoderDims encoder_dims(const ExperimentConfig& cfg) {
  EncoderDims d;
  d.vocab_size = Vocabulary::standard().size();
  d.hidden = cfg.hidden;
  d.embed = cfg.embed;
  return d;
}

EvalSuiteConfig eval_config(const ExperimentConfig& cfg) {
  EvalSuiteConfig e = cfg.eval;
  e.sigma = cfg.sigma;
  e.m2 = cfg.train.loss.m2;
  e.caps = cfg.caps;
  return e;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  return t;
}

Dataset generate_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  // Anchors and edits use separate streams, so configurations that differ
  // only in their counterfactual settings share anchor scenes.
  const std::uint64_t base = mix_seed(cfg.data_seed, seed);
  Prng scene_rng(mix_seed(base, 1));
  Prng edit_rng(mix_seed(base, 2));
  const UnitSpec spec = unit_spec(cfg);
  Dataset data;
  data.reserve(cfg.train_units);
  for (std::size_t i = 0; i < cfg.train_units; ++i) {
    const Scene scene = sample_scene(scene_rng, cfg.caps);
    try {
      data.push_back(assemble_unit(scene, spec, edit_rng));
    } catch (const Error& e) {
      throw Error(e.kind(), "record " + std::to_string(i) + ": " + e.what());
    }
  }
  return data;
}

DatasetManifest summarize(const Dataset& data) {
  DatasetManifest m;
  for (EditKind kind : kAllEditKinds) {
    m.complete_by_kind[std::string(name_of(kind))] = 0;
    m.edited_by_kind[std::string(name_of(kind))] = 0;
  }
  m.units = data.size();
  for (const CounterfactualUnit& u : data) {
    m.complete_pairs += u.complete.size();
    m.edited_images += u.edited.size();
    for (const CompletePair& c : u.complete) ++m.complete_by_kind[std::string(name_of(c.kind))];
    for (const EditedImage& e : u.edited) ++m.edited_by_kind[std::string(name_of(e.kind))];
  }
  return m;
}

ordered_json to_json(const DatasetManifest& m) {
  ordered_json j;
  j["units"] = m.units;
  j["complete_pairs"] = m.complete_pairs;
  j["edited_images"] = m.edited_images;
  ordered_json complete, edited;
  for (EditKind kind : kAllEditKinds) {
    const std::string name(name_of(kind));
    complete[name] = m.complete_by_kind.at(name);
    edited[name] = m.edited_by_kind.at(name);
  }
  j["complete_by_kind"] = std::move(complete);
  j["edited_by_kind"] = std::move(edited);
  return j;
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::string text;
  for (const CounterfactualUnit& u : data) {
    text += unit_to_json(u).dump();
    text += '\n';
  }
  write_file(path, text);
  write_file(path + ".manifest.json", to_json(summarize(data)).dump(2) + "\n");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read dataset '" + path + "'");
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      throw Error(ErrorKind::kFormat, path + ":" + std::to_string(lineno) + ": invalid JSON");
    }
    try {
      data.push_back(unit_from_json(j));
    } catch (const Error& e) {
      throw Error(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return data;
}

double tail_loss_variance(const std::vector<StepRecord>& steps) {
  if (steps.empty()) return 0.0;
  const std::size_t n = std::max<std::size_t>(1, steps.size() / 10);
  const auto first = steps.end() - static_cast<std::ptrdiff_t>(n);
  double mean = 0.0;
  for (auto it = first; it != steps.end(); ++it) mean += it->total;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (auto it = first; it != steps.end(); ++it) var += (it->total - mean) * (it->total - mean);
  return var / static_cast<double>(n);
}

RunMetrics evaluate_params(const ExperimentConfig& cfg, const EncoderParams& params) {
  LearnedModel model(params);
  return evaluate_suite(model, eval_config(cfg), cfg.eval_seed);
}

RunOutput run_seed(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
  validate(cfg);
  EvalHook hook;
  if (cfg.train.eval_every > 0) {
    hook = [&cfg](const EncoderParams& params, std::size_t) {
      return to_json(evaluate_params(cfg, params));
    };
  }
  RunOutput out;
  out.train = train(data, train_config(cfg, seed), encoder_dims(cfg), hook);
  out.metrics = evaluate_params(cfg, out.train.params);
  out.metrics["train_loss_variance"] = tail_loss_variance(out.train.steps);
  return out;
}

RunOutput run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_seed(cfg, generate_dataset(cfg, seed), seed);
}

RunMetrics evaluate_untrained(const ExperimentConfig& cfg, std::uint64_t seed) {
  Prng rng(mix_seed(seed, static_cast<std::uint64_t>(SeedStream::kInit)));
  return evaluate_params(cfg, init_params(rng, encoder_dims(cfg)));
}

std::vector<std::string> ablation_matrix_names() {
  return {"loss_components", "cf_modality", "cf_type_removal", "cf_quantity", "k_sweep", "sweep"};
}

std::vector<AblationCell> ablation_matrix(std::string_view name, const ExperimentConfig& base) {
  std::vector<AblationCell> cells;
  auto add = [&](std::string cell, auto&& edit) {
    ExperimentConfig c = base;
    edit(c);
    cells.push_back({std::move(cell), std::move(c)});
  };
  const LossConfig w = base.train.loss;
  if (name == "loss_components") {
    struct Row {
      const char* name;
      bool a, b, g;
    };
    for (const Row& r : {Row{"full", true, true, true}, Row{"align_csd", true, true, false},
                         Row{"csd_fcd", false, true, true}, Row{"align_fcd", true, false, true},
                         Row{"align", true, false, false}, Row{"csd", false, true, false},
                         Row{"fcd", false, false, true}}) {
      add(r.name, [&](ExperimentConfig& c) {
        c.train.loss.alpha = r.a ? w.alpha : 0.0;
        c.train.loss.beta = r.b ? w.beta : 0.0;
        c.train.loss.gamma = r.g ? w.gamma : 0.0;
      });
    }
  } else if (name == "cf_modality") {
    add("full", [](ExperimentConfig&) {});
    add("text_only", [](ExperimentConfig& c) {
      c.mode = PairMode::kTextOnly;
      c.num_edited = 0;
    });
    add("image_only", [](ExperimentConfig& c) { c.num_complete = 0; });
    add("non_causal", [](ExperimentConfig& c) { c.train.cf_ratio = 0.0; });
  } else if (name == "cf_type_removal") {
    add("full", [](ExperimentConfig&) {});
    for (EditKind kind : kAllEditKinds) {
      add("no_" + std::string(name_of(kind)),
          [&](ExperimentConfig& c) { c.kind_mix = c.kind_mix.without(kind); });
    }
  } else if (name == "cf_quantity") {
    for (int tenths : {0, 2, 4, 6, 8, 10}) {
      const double ratio = tenths / 10.0;
      add("cf_ratio_" + std::to_string(tenths / 10) + "." + std::to_string(tenths % 10),
          [&](ExperimentConfig& c) { c.train.cf_ratio = ratio; });
    }
  } else if (name == "k_sweep") {
    for (std::size_t k = 1; k <= 7; ++k) {
      add("k" + std::to_string(k), [&](ExperimentConfig& c) {
        c.num_complete = k;
        c.num_edited = k;
      });
    }
  } else if (name == "sweep") {
    struct Row {
      const char* name;
      double alpha, beta, gamma, m1, m2;
    };
    for (const Row& r : {Row{"default", 1.0, 0.45, 0.55, 0.25, 0.30},
                         Row{"alpha0.8_beta0.60", 0.8, 0.60, 0.55, 0.25, 0.30},
                         Row{"alpha1.2", 1.2, 0.45, 0.55, 0.25, 0.30},
                         Row{"gamma0.40_m1_0.15", 1.0, 0.45, 0.40, 0.15, 0.30},
                         Row{"gamma0.70_m2_0.35", 1.0, 0.45, 0.70, 0.25, 0.35}}) {
      add(r.name, [&](ExperimentConfig& c) {
        c.train.loss = {r.alpha, r.beta, r.gamma, r.m1, r.m2};
      });
    }
  } else {
    bad_config("unknown ablation matrix '" + std::string(name) + "'");
  }
  return cells;
}

namespace {

void write_run(const std::string& dir, const RunOutput& run, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::string stream;
  for (const auto& rec : run.train.metrics) {
    stream += rec.dump();
    stream += '\n';
  }
  write_file(dir + "/metrics.jsonl", stream);
  save_checkpoint(dir + "/checkpoint.json", {run.train.params, seed});
  write_file(dir + "/eval.json", to_json(run.metrics).dump(2) + "\n");
}

}  // namespace

std::vector<CellResult> run_cells(const std::vector<AblationCell>& cells, std::size_t jobs,
                                  const std::string& out_dir) {
  std::vector<CellResult> results(cells.size());
  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    validate(cells[c].config);
    results[c].name = cells[c].name;
    results[c].seeds = cells[c].config.seeds;
    results[c].runs.resize(cells[c].config.seeds.size());
    for (std::size_t s = 0; s < cells[c].config.seeds.size(); ++s) tasks.emplace_back(c, s);
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const auto [c, s] = tasks[i];
      try {
        const ExperimentConfig& cfg = cells[c].config;
        const std::uint64_t seed = cfg.seeds[s];
        RunOutput run = run_seed(cfg, seed);
        if (!out_dir.empty()) {
          write_run(out_dir + "/" + cells[c].name + "/seed" + std::to_string(seed), run, seed);
        }
        results[c].runs[s] = std::move(run.metrics);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks.size());
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  for (CellResult& r : results) {
    r.report = aggregate_seeds(r.runs);
    if (!out_dir.empty()) {
      const std::string dir = out_dir + "/" + r.name;
      std::filesystem::create_directories(dir);
      write_file(dir + "/report.json", to_json(r.report).dump(2) + "\n");
      write_file(dir + "/report.csv", to_csv(r.report));
    }
  }
  return results;
}

std::string ablation_csv(const std::vector<CellResult>& results) {
  static constexpr std::array kColumns{"replace_obj",       "replace_attr",     "replace_rel",
                                       "replace_avg",       "replace_attribute", "replace_object",
                                       "replace_relation",  "replace_location", "margin_strict"};
  std::string out = "cell,n_seeds";
  for (const char* c : kColumns) out += std::string(",") + c + "_mean," + c + "_std";
  out += '\n';
  for (const CellResult& r : results) {
    out += r.name + "," + std::to_string(r.runs.size());
    for (const char* c : kColumns) {
      const MetricSummary& m = r.report.metrics.at(c);
      out += "," + fmt(m.mean) + "," + fmt(m.std);
    }
    out += '\n';
  }
  return out;
}

std::string sweep_csv(const std::vector<AblationCell>& cells,
                      const std::vector<CellResult>& results) {
  std::string out =
      "cell,alpha,beta,gamma,m1,m2,n_seeds,replace_avg_mean,replace_avg_std,"
      "loss_variance_mean,loss_variance_std\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const LossConfig& l = cells.at(i).config.train.loss;
    const MetricSummary& acc = results[i].report.metrics.at("replace_avg");
    const MetricSummary& var = results[i].report.metrics.at("train_loss_variance");
    out += results[i].name + "," + fmt(l.alpha) + "," + fmt(l.beta) + "," + fmt(l.gamma) + "," +
           fmt(l.m1) + "," + fmt(l.m2) + "," + std::to_string(results[i].runs.size()) + "," +
           fmt(acc.mean) + "," + fmt(acc.std) + "," + fmt(var.mean) + "," + fmt(var.std) + "\n";
  }
  return out;
}

namespace {

struct CheckBatch {
  Dataset units;
  Batch batch;
};

CheckBatch random_batch(Prng& rng, std::size_t n) {
  CheckBatch cb;
  cb.units.reserve(n);
  for (std::size_t i = 0; i < n; ++i) cb.units.push_back(assemble_unit(sample_scene(rng), {}, rng));
  for (std::size_t i = 0; i < n; ++i) {
    cb.batch.factual.push_back(&cb.units[i].anchor);
    cb.batch.units.push_back({&cb.units[i], i});
  }
  return cb;
}

// Coordinates to probe: the largest analytic entries, then uniform draws.
std::vector<std::size_t> pick_coords(std::span<const double> grad, std::size_t count, Prng& rng) {
  const std::size_t size = grad.size();
  if (size <= count) {
    std::vector<std::size_t> all(size);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t top = count / 2;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double fa = std::abs(grad[a]), fb = std::abs(grad[b]);
                      return fa != fb ? fa > fb : a < b;
                    });
  std::vector<std::size_t> picked(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top));
  while (picked.size() < count) {
    const std::size_t c = rng.uniform_index(size);
    if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
  }
  return picked;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  if (!(cfg.step >= 1e-6 && cfg.step <= 1e-3)) {
    bad_config("gradcheck step must lie in [1e-6, 1e-3]");
  }
  validate(cfg.loss);
  GradcheckReport report;
  for (const auto& [hidden, embed] : cfg.dims) {
    EncoderDims dims;
    dims.vocab_size = Vocabulary::standard().size();
    dims.hidden = hidden;
    dims.embed = embed;
    const std::string prefix = "h" + std::to_string(hidden) + "_d" + std::to_string(embed);

    std::vector<TensorCheck> checks;
    for (std::size_t b = 0; b < cfg.batches; ++b) {
      Prng rng(mix_seed(mix_seed(cfg.seed, hidden * 1000 + embed), b));
      EncoderParams params = init_params(rng, dims);
      for (Vector* bias : {&params.b1, &params.b2, &params.c1, &params.c2}) {
        for (double& v : *bias) v = rng.uniform(-0.1, 0.1);
      }
      params.log_inv_temp = -std::log(rng.uniform(0.05, 0.5));
      const CheckBatch cb = random_batch(rng, cfg.batch_size);

      const LossReport center = total_loss(cb.batch, params, cfg.loss, {});
      ParamGrads analytic = center.grads;
      if (cfg.corrupt) cfg.corrupt(analytic);

      auto p_tensors = params.tensors();
      const auto a_tensors = std::as_const(analytic).tensors();
      if (checks.empty()) {
        for (const auto& t : p_tensors) checks.push_back({std::string(t.name), 0.0, 0, 0});
      }
      for (std::size_t k = 0; k < p_tensors.size(); ++k) {
        const auto coords = pick_coords(a_tensors[k].values, cfg.coords_per_tensor, rng);
        double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
        std::size_t used = 0;
        for (std::size_t i : coords) {
          double& theta = p_tensors[k].values[i];
          const double saved = theta;
          theta = saved + cfg.step;
          const LossReport plus = total_loss(cb.batch, params, cfg.loss, {});
          theta = saved - cfg.step;
          const LossReport minus = total_loss(cb.batch, params, cfg.loss, {});
          theta = saved;
          if (plus.pattern_digest != center.pattern_digest ||
              minus.pattern_digest != center.pattern_digest) {
            ++checks[k].skipped;
            continue;
          }
          const double numeric = (plus.total - minus.total) / (2.0 * cfg.step);
          const double a = a_tensors[k].values[i];
          max_diff = std::max(max_diff, std::abs(a - numeric));
          max_a = std::max(max_a, std::abs(a));
          max_n = std::max(max_n, std::abs(numeric));
          ++used;
        }
        checks[k].checked += used;
        if (used > 0) {
          const double rel = max_diff / std::max({max_a, max_n, 1e-10});
          checks[k].max_rel_error = std::max(checks[k].max_rel_error, rel);
        }
      }
    }
    for (TensorCheck& c : checks) {
      report.max_rel_error = std::max(report.max_rel_error, c.max_rel_error);
      if (!(c.max_rel_error < cfg.tolerance) || c.checked == 0) report.pass = false;
      report.tensors.emplace_back(prefix, std::move(c));
    }
  }
  return report;
}

ordered_json to_json(const GradcheckReport& r) {
  ordered_json j;
  j["pass"] = r.pass;
  j["max_rel_error"] = r.max_rel_error;
  ordered_json arr = ordered_json::array();
  for (const auto& [config, t] : r.tensors) {
    arr.push_back({{"config", config},
                   {"tensor", t.tensor},
                   {"max_rel_error", t.max_rel_error},
                   {"checked", t.checked},
                   {"skipped", t.skipped}});
  }
  j["tensors"] = std::move(arr);
  return j;
}

}  // namespace cflab
