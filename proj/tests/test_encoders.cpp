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

#include "cflab/encoders.hpp"
#include "cflab/world.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cflab;
using cflab::testing::error_kind_of;
using cflab::testing::random_vector;

namespace {

EncoderDims small_dims(std::size_t h = 16, std::size_t d = 8) {
  return {kImageDim, Vocabulary::standard().size(), h, d};
}

Vector flatten(const EncoderParams& p) {
  Vector out;
  for (const auto& t : p.tensors()) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

EncoderParams unflatten(const EncoderParams& shape, const Vector& flat) {
  EncoderParams p = shape;
  std::size_t k = 0;
  for (auto& t : p.tensors()) {
    for (double& v : t.values) v = flat[k++];
  }
  return p;
}

std::string tmp_path(const std::string& name) {
  std::filesystem::create_directories(CFLAB_TEST_TMP);
  return std::string(CFLAB_TEST_TMP) + "/" + name;
}

}  // namespace

TEST_SUITE("encoders") {
  TEST_CASE("init_params") {
    Prng a(3);
    Prng b(3);
    const EncoderParams p = init_params(a, small_dims());
    CHECK(p == init_params(b, small_dims()));
    CHECK(std::abs(p.temperature() - 0.07) < 1e-15);
    const double bound = std::sqrt(6.0 / (kImageDim + 16));
    for (double w : p.w1.values()) CHECK(std::abs(w) <= bound);
    for (double v : p.b1) CHECK(v == 0.0);
    for (double v : p.c2) CHECK(v == 0.0);
    CHECK(p.dims() == small_dims());

    Prng r(4);
    const EncoderParams tiny = init_params(r, small_dims(1, 2));
    CHECK(tiny.w1.rows() == kImageDim);
    CHECK(tiny.w1.cols() == 1);
    CHECK(tiny.w2.rows() == 1);
    CHECK(tiny.w2.cols() == 2);
    Vector x(kImageDim, 0.0);
    x[0] = 1.0;
    // The single hidden unit may be inactive; only the shapes are at stake.
    Vector bias_only = tiny.b2;
    bias_only[0] = 1.0;
    EncoderParams shaped = tiny;
    shaped.b2 = bias_only;
    CHECK(encode_image(shaped, x).embedding.size() == 2);
    CHECK(error_kind_of([&] { init_params(r, small_dims(0, 2)); }) == ErrorKind::kInvalidConfig);
    CHECK(error_kind_of([&] { init_params(r, small_dims(4, 1)); }) == ErrorKind::kInvalidConfig);
  }

  TEST_CASE("encode_image") {
    Prng rng(5);
    const EncoderParams p = init_params(rng, small_dims(32, 16));
    for (int i = 0; i < 1000; ++i) {
      const Vector x = random_vector(rng, kImageDim);
      const Encoding e = encode_image(p, x);
      REQUIRE(std::abs(l2_norm(e.embedding) - 1.0) < 1e-9);
    }
    EncoderParams scaled = p;
    for (double& w : scaled.w2.values()) w *= 3.7;
    for (double& b : scaled.b2) b *= 3.7;
    for (int i = 0; i < 20; ++i) {
      const Vector x = random_vector(rng, kImageDim);
      CHECK(cflab::testing::max_abs_diff(encode_image(p, x).embedding,
                                         encode_image(scaled, x).embedding) < 1e-14);
    }
    const EncoderParams zero = EncoderParams::zeros(small_dims());
    CHECK(error_kind_of([&] { encode_image(zero, Vector(kImageDim, 1.0)); }) ==
          ErrorKind::kZeroNorm);
    CHECK(error_kind_of([&] { encode_image(p, Vector(3, 1.0)); }) == ErrorKind::kShapeMismatch);
  }

  TEST_CASE("encode_text") {
    Prng rng(6);
    const EncoderParams p = init_params(rng, small_dims(32, 16));
    for (int i = 0; i < 200; ++i) {
      const Scene s = sample_scene(rng);
      const Vector t = render_caption(s);
      const Vector e = encode_text(p, t).embedding;
      CHECK(e == encode_text(p, t).embedding);
      CHECK(std::abs(l2_norm(e) - 1.0) < 1e-9);
      Scene other = s;
      other.objects[0].color = static_cast<Color>((static_cast<int>(s.objects[0].color) + 1) % 4);
      CHECK(dot(e, encode_text(p, render_caption(other)).embedding) < 1.0 - 1e-9);
    }
  }

  TEST_CASE("backward matches finite differences of a linear readout") {
    Prng rng(7);
    const EncoderDims dims = small_dims(6, 4);
    EncoderParams p = init_params(rng, dims);
    for (double& b : p.b1) b = rng.uniform(-0.1, 0.1);
    for (double& b : p.c1) b = rng.uniform(-0.1, 0.1);
    const Vector x = random_vector(rng, kImageDim, 0.0, 1.0);
    const Vector t = render_caption(sample_scene(rng));
    const Vector u_img = random_vector(rng, 4);
    const Vector u_txt = random_vector(rng, 4);

    auto objective = [&](const Vector& flat) {
      const EncoderParams q = unflatten(p, flat);
      return dot(u_img, encode_image(q, x).embedding) + dot(u_txt, encode_text(q, t).embedding);
    };
    const std::vector<Encoding> encs{encode_image(p, x), encode_text(p, t)};
    const std::vector<Vector> ups{u_img, u_txt};
    const Vector analytic = flatten(backward(p, encs, ups, 0.0));
    const Vector numeric = finite_diff_grad(objective, flatten(p), 1e-6);
    double scale = 0.0;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    CHECK(cflab::testing::max_abs_diff(analytic, numeric) / scale < 1e-6);
  }

  TEST_CASE("backward special upstreams") {
    Prng rng(8);
    const EncoderParams p = init_params(rng, small_dims());
    const Encoding e = encode_image(p, random_vector(rng, kImageDim));
    const std::vector<Encoding> encs{e};
    const ParamGrads zero = backward(p, encs, std::vector<Vector>{Vector(8, 0.0)}, 0.0);
    for (const auto& t : zero.tensors()) {
      for (double v : t.values) CHECK(v == 0.0);
    }
    Vector parallel = e.embedding;
    for (double& v : parallel) v *= 2.5;
    const ParamGrads par = backward(p, encs, std::vector<Vector>{parallel}, 0.0);
    for (const auto& t : par.tensors()) {
      for (double v : t.values) CHECK(std::abs(v) < 1e-12);
    }
    CHECK(error_kind_of([&] { backward(p, encs, std::vector<Vector>{}, 0.0); }) ==
          ErrorKind::kShapeMismatch);
  }

  TEST_CASE("temperature gradient maps through the log parameterization") {
    Prng rng(9);
    EncoderParams p = init_params(rng, small_dims());
    ParamGrads g = EncoderParams::zeros(p.dims());
    accumulate_temperature_grad(p, 2.0, g);
    CHECK(g.log_inv_temp == doctest::Approx(-2.0 * 0.07).epsilon(1e-14));
  }

  TEST_CASE("temperature clamp") {
    Prng rng(10);
    EncoderParams p = init_params(rng, small_dims());
    p.log_inv_temp = 50.0;
    p.clamp_temperature();
    CHECK(p.temperature() == doctest::Approx(0.01).epsilon(1e-14));
    p.log_inv_temp = -3.0;
    p.clamp_temperature();
    CHECK(p.temperature() == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("dropout") {
    Prng rng(11);
    const EncoderParams p = init_params(rng, small_dims(64, 8));
    const Vector x = random_vector(rng, kImageDim);
    Prng d1(1);
    const Encoding off = encode_image(p, x, {0.0, &d1});
    CHECK(off.dropout_scale.empty());
    CHECK(d1.next_u64() == Prng(1).next_u64());
    Prng d2(2);
    const Encoding on = encode_image(p, x, {0.5, &d2});
    REQUIRE(on.dropout_scale.size() == 64);
    for (double s : on.dropout_scale) CHECK((s == 0.0 || s == 2.0));
  }

  TEST_CASE("checkpoint round trip is exact") {
    Prng rng(12);
    EncoderParams p = init_params(rng, small_dims(5, 3));
    p.log_inv_temp = 1.2345678901234567;
    const std::string path = tmp_path("ckpt.json");
    save_checkpoint(path, {p, 99});
    const Checkpoint c = load_checkpoint(path);
    CHECK(c.params == p);
    CHECK(c.seed == 99);
  }

  TEST_CASE("checkpoint errors") {
    Prng rng(13);
    const std::string path = tmp_path("ckpt_v.json");
    save_checkpoint(path, {init_params(rng, small_dims(2, 2)), 1});
    std::ifstream in(path);
    nlohmann::json j = nlohmann::json::parse(in);
    in.close();
    j["version"] = kCheckpointVersion + 1;
    std::ofstream(path) << j.dump();
    CHECK(error_kind_of([&] { load_checkpoint(path); }) == ErrorKind::kFormat);

    const std::string junk = tmp_path("ckpt_junk.json");
    std::ofstream(junk) << "not json at all";
    CHECK(error_kind_of([&] { load_checkpoint(junk); }) == ErrorKind::kFormat);

    const std::string truncated = tmp_path("ckpt_trunc.json");
    j["version"] = kCheckpointVersion;
    j.erase("tensors");
    std::ofstream(truncated) << j.dump();
    CHECK(error_kind_of([&] { load_checkpoint(truncated); }) == ErrorKind::kFormat);

    CHECK(error_kind_of([&] { load_checkpoint(tmp_path("missing/none.json")); }) ==
          ErrorKind::kIo);
  }
}
