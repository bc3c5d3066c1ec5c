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


#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cflab/experiment.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cflab;
using cflab::testing::error_kind_of;

namespace {

std::string tmp_dir(const std::string& name) {
  const std::string dir = std::string(CFLAB_TEST_TMP) + "/" + name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.hidden = 16;
  c.embed = 8;
  c.train.steps = 30;
  c.train.warmup_steps = 3;
  c.train_units = 40;
  c.eval.replace_scenes = 40;
  c.eval.retrieval_pairs = 20;
  c.eval.zeroshot_images = 30;
  c.eval.probe_test_scenes = 20;
  c.eval.probe_validation_scenes = 20;
  c.eval.margin_units = 30;
  c.seeds = {0, 1};
  return c;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("defaults") {
    const ExperimentConfig c;
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(c.num_complete == 4);
    CHECK(c.num_edited == 4);
    CHECK(c.train.loss == LossConfig{});
    CHECK(c.train.effective_peak_lr() == doctest::Approx(1e-3));
    CHECK(c.hidden == 128);
    CHECK(c.embed == 64);
    CHECK(config_from_json(nlohmann::json::object()) == c);
  }

  TEST_CASE("config round trip") {
    ExperimentConfig c = tiny_config();
    c.sigma = 0.125;
    c.kind_mix = KindMix::uniform().without(EditKind::kLocation);
    c.mode = PairMode::kTextOnly;
    c.train.loss.m2 = 0.35;
    c.train.cf_ratio = 0.4;
    c.caps = {2, 1};
    c.out_dir = "somewhere";
    const ExperimentConfig parsed = config_from_json(nlohmann::json::parse(to_json(c).dump()));
    const ExperimentConfig back = config_from_json(nlohmann::json::parse(to_json(parsed).dump()));
    CHECK(back == parsed);
    CHECK(to_json(back).dump() == to_json(c).dump());
    CHECK(eval_config(back).sigma == 0.125);
    CHECK(eval_config(back).m2 == 0.35);
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    auto kind = [](const char* text) {
      return error_kind_of([&] { config_from_json(nlohmann::json::parse(text)); });
    };
    CHECK(kind(R"({"bogus": 1})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"train": {"stepz": 1}})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"train": {"steps": -1}})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"train": {"steps": "ten"}})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"loss": {"beta": true}})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"counterfactuals": {"mode": "sideways"}})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"counterfactuals": {"kind_mix": {"colour": 1}}})") ==
          ErrorKind::kInvalidConfig);
    CHECK(kind(R"({"seeds": [1, -2]})") == ErrorKind::kInvalidConfig);
    CHECK(kind(R"([1, 2])") == ErrorKind::kInvalidConfig);

    ExperimentConfig c;
    c.train.grad_accumulation = 4;
    CHECK(error_kind_of([&] { validate(c); }) == ErrorKind::kInvalidConfig);
    c = ExperimentConfig{};
    c.num_complete = 0;
    c.num_edited = 0;
    CHECK(error_kind_of([&] { validate(c); }) == ErrorKind::kInvalidConfig);
  }

  TEST_CASE("overrides") {
    ExperimentConfig c;
    apply_override(c, "loss.beta=0.6");
    apply_override(c, "train.steps=10");
    CHECK(error_kind_of([&] { validate(c); }) == ErrorKind::kInvalidConfig);
    apply_override(c, "train.warmup_steps=2");
    validate(c);
    apply_override(c, "counterfactuals.mode=text-only");
    apply_override(c, "seeds=[4,5]");
    apply_override(c, "out_dir=elsewhere");
    CHECK(c.train.loss.beta == 0.6);
    CHECK(c.train.steps == 10);
    CHECK(c.mode == PairMode::kTextOnly);
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(c.out_dir == "elsewhere");
    CHECK(error_kind_of([&] { apply_override(c, "loss.delta=1"); }) == ErrorKind::kInvalidConfig);
    CHECK(error_kind_of([&] { apply_override(c, "no_equals_sign"); }) ==
          ErrorKind::kInvalidConfig);
  }

  TEST_CASE("load_config") {
    const std::string dir = tmp_dir("load_config");
    std::ofstream(dir + "/c.json") << R"({"loss": {"gamma": 0.7}, "seeds": [9]})";
    const ExperimentConfig c = load_config(dir + "/c.json");
    CHECK(c.train.loss.gamma == 0.7);
    CHECK(c.seeds == std::vector<std::uint64_t>{9});
    std::ofstream(dir + "/bad.json") << "{ not json";
    CHECK(error_kind_of([&] { load_config(dir + "/bad.json"); }) == ErrorKind::kInvalidConfig);
    CHECK(error_kind_of([&] { load_config(dir + "/missing.json"); }) == ErrorKind::kIo);
  }

  TEST_CASE("dataset generation, manifest and byte-stable files") {
    ExperimentConfig c;
    c.train_units = 100;
    const Dataset d = generate_dataset(c, 0);
    CHECK(d.size() == 100);
    const DatasetManifest m = summarize(d);
    CHECK(m.units == 100);
    CHECK(m.complete_pairs == 400);
    CHECK(m.edited_images == 400);
    std::size_t by_kind = 0;
    for (const auto& [k, n] : m.complete_by_kind) by_kind += n;
    CHECK(by_kind == 400);

    const std::string dir = tmp_dir("dataset");
    write_dataset(dir + "/a.jsonl", d);
    write_dataset(dir + "/b.jsonl", generate_dataset(c, 0));
    CHECK(slurp(dir + "/a.jsonl") == slurp(dir + "/b.jsonl"));
    CHECK(slurp(dir + "/a.jsonl.manifest.json") == slurp(dir + "/b.jsonl.manifest.json"));
    std::size_t lines = 0;
    std::ifstream in(dir + "/a.jsonl");
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 100);

    const Dataset back = read_dataset(dir + "/a.jsonl");
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      REQUIRE(back[i].anchor.image == d[i].anchor.image);
      REQUIRE(back[i].edited.back().image == d[i].edited.back().image);
    }
    CHECK(generate_dataset(c, 1)[0].anchor.image != d[0].anchor.image);
  }

  TEST_CASE("anchors are shared across cells that change only the edits") {
    ExperimentConfig a;
    a.train_units = 20;
    ExperimentConfig b = a;
    b.kind_mix = KindMix::uniform().without(EditKind::kAttribute);
    b.num_complete = 1;
    const Dataset da = generate_dataset(a, 3);
    const Dataset db = generate_dataset(b, 3);
    for (std::size_t i = 0; i < da.size(); ++i) CHECK(da[i].anchor_scene == db[i].anchor_scene);
  }

  TEST_CASE("NoLegalEdit names the record") {
    ExperimentConfig c;
    c.train_units = 10;
    c.caps.max_relations = 0;
    c.kind_mix = KindMix::only(EditKind::kRelation);
    try {
      generate_dataset(c, 0);
      FAIL("expected NoLegalEdit");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNoLegalEdit);
      CHECK(std::string(e.what()).find("record 0") != std::string::npos);
    }
  }

  TEST_CASE("train then eval reproduces the final in-training snapshot") {
    ExperimentConfig c = tiny_config();
    c.train.eval_every = 10;
    const RunOutput run = run_seed(c, 0);
    const nlohmann::ordered_json& last = run.train.metrics.back();
    REQUIRE(last.contains("eval"));
    CHECK(last["step"] == c.train.steps);

    const std::string dir = tmp_dir("roundtrip");
    save_checkpoint(dir + "/ckpt.json", {run.train.params, 0});
    const RunMetrics again = evaluate_params(c, load_checkpoint(dir + "/ckpt.json").params);
    for (const auto& [k, v] : again) {
      INFO(k);
      CHECK(std::abs(last["eval"][k].get<double>() - v) <= 1e-12);
      CHECK(std::abs(run.metrics.at(k) - v) <= 1e-12);
    }
  }

  TEST_CASE("tail loss variance") {
    std::vector<StepRecord> steps(20);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      steps[i].total = i < 18 ? 5.0 : (i == 18 ? 1 : 3);
    }
    CHECK(tail_loss_variance(steps) == doctest::Approx(1.0));
    steps.resize(3);
    CHECK(tail_loss_variance(steps) == 0.0);
  }

  TEST_CASE("ablation matrices") {
    const ExperimentConfig base;
    CHECK(ablation_matrix("loss_components", base).size() == 7);
    const auto q = ablation_matrix("cf_quantity", base);
    REQUIRE(q.size() == 6);
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(q[i].config.train.cf_ratio == doctest::Approx(0.2 * i));
    }
    const auto k = ablation_matrix("k_sweep", base);
    REQUIRE(k.size() == 7);
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i].config.num_complete == i + 1);
    const auto m = ablation_matrix("cf_modality", base);
    REQUIRE(m.size() == 4);
    CHECK(m[1].config.mode == PairMode::kTextOnly);
    CHECK(m[1].config.num_edited == 0);
    CHECK(m[2].config.num_complete == 0);
    CHECK(m[3].config.train.cf_ratio == 0.0);
    const auto t = ablation_matrix("cf_type_removal", base);
    REQUIRE(t.size() == 5);
    CHECK(t[3].name == "no_relation");
    CHECK(t[3].config.kind_mix.weight(EditKind::kRelation) == 0.0);
    CHECK(ablation_matrix("sweep", base).size() == 5);
    CHECK(error_kind_of([&] { ablation_matrix("nope", base); }) == ErrorKind::kInvalidConfig);

    const auto lc = ablation_matrix("loss_components", base);
    CHECK(lc[4].name == "align");
    CHECK(lc[4].config.train.loss.beta == 0.0);
    CHECK(lc[4].config.train.loss.gamma == 0.0);
    CHECK(lc[0].config.train.loss == base.train.loss);
  }

  TEST_CASE("run_cells is independent of the job count") {
    ExperimentConfig c = tiny_config();
    auto cells = ablation_matrix("cf_modality", c);
    cells.resize(2);
    const std::string dir = tmp_dir("cells");
    const auto serial = run_cells(cells, 1, dir + "/serial");
    const auto parallel = run_cells(cells, 3, dir + "/parallel");
    REQUIRE(serial.size() == 2);
    for (std::size_t i = 0; i < serial.size(); ++i) CHECK(serial[i].runs == parallel[i].runs);
    const std::string csv = ablation_csv(serial);
    CHECK(csv.rfind("cell,n_seeds,replace_obj_mean,replace_obj_std,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    for (const char* f : {"/serial/full/seed0/metrics.jsonl", "/serial/full/seed1/checkpoint.json",
                          "/serial/full/report.csv", "/serial/text_only/seed0/eval.json"}) {
      INFO(f);
      CHECK(std::filesystem::exists(dir + f));
    }
    CHECK(slurp(dir + "/serial/full/seed0/metrics.jsonl") ==
          slurp(dir + "/parallel/full/seed0/metrics.jsonl"));
  }

  TEST_CASE("gradcheck passes and catches a corrupted backward") {
    GradcheckConfig g;
    g.batches = 2;
    const GradcheckReport ok = run_gradcheck(g);
    CHECK(ok.pass);
    CHECK(ok.max_rel_error < 1e-4);
    CHECK(ok.tensors.size() == 18);
    for (const auto& [name, t] : ok.tensors) CHECK(t.checked > 0);

    g.corrupt = [](ParamGrads& grads) { grads.c1[0] += 0.5; };
    CHECK_FALSE(run_gradcheck(g).pass);
    g.corrupt = [](ParamGrads& grads) { grads.log_inv_temp *= 1.01; };
    CHECK_FALSE(run_gradcheck(g).pass);
  }
}
