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

#include "cflab/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cflab {

namespace {

struct BranchRefs {
  const Matrix& in;
  const Vector& in_bias;
  const Matrix& out;
  const Vector& out_bias;
};

BranchRefs branch_of(const EncoderParams& p, Branch b) {
  if (b == Branch::kImage) return {p.w1, p.b1, p.w2, p.b2};
  return {p.v1, p.c1, p.v2, p.c2};
}

struct MutableBranch {
  Matrix& in;
  Vector& in_bias;
  Matrix& out;
  Vector& out_bias;
};

MutableBranch branch_of(EncoderParams& p, Branch b) {
  if (b == Branch::kImage) return {p.w1, p.b1, p.w2, p.b2};
  return {p.v1, p.c1, p.v2, p.c2};
}

void glorot_fill(Matrix& m, Prng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (double& w : m.values()) w = rng.uniform(-limit, limit);
}

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

}  // namespace

EncoderDims EncoderParams::dims() const {
  return {w1.rows(), v1.rows(), w1.cols(), w2.cols()};
}

double EncoderParams::temperature() const { return std::exp(-log_inv_temp); }

void EncoderParams::clamp_temperature() {
  const double lo = -std::log(kMaxTemperature);
  const double hi = -std::log(kMinTemperature);
  log_inv_temp = std::clamp(log_inv_temp, lo, hi);
}

EncoderParams EncoderParams::zeros(const EncoderDims& d) {
  EncoderParams p;
  p.w1 = Matrix(d.image_dim, d.hidden);
  p.b1 = Vector(d.hidden, 0.0);
  p.w2 = Matrix(d.hidden, d.embed);
  p.b2 = Vector(d.embed, 0.0);
  p.v1 = Matrix(d.vocab_size, d.hidden);
  p.c1 = Vector(d.hidden, 0.0);
  p.v2 = Matrix(d.hidden, d.embed);
  p.c2 = Vector(d.embed, 0.0);
  p.log_inv_temp = 0.0;
  return p;
}

std::vector<NamedTensor> EncoderParams::tensors() {
  return {{"w1", w1.values()}, {"b1", b1}, {"w2", w2.values()}, {"b2", b2},
          {"v1", v1.values()}, {"c1", c1}, {"v2", v2.values()}, {"c2", c2},
          {"log_inv_temp", std::span<double>(&log_inv_temp, 1)}};
}

std::vector<ConstNamedTensor> EncoderParams::tensors() const {
  return {{"w1", w1.values()}, {"b1", b1}, {"w2", w2.values()}, {"b2", b2},
          {"v1", v1.values()}, {"c1", c1}, {"v2", v2.values()}, {"c2", c2},
          {"log_inv_temp", std::span<const double>(&log_inv_temp, 1)}};
}

EncoderParams init_params(Prng& rng, const EncoderDims& dims) {
  if (dims.hidden < 1 || dims.embed < 2 || dims.image_dim < 1 || dims.vocab_size < 1) {
    throw Error(ErrorKind::kInvalidConfig, "encoder dims need hidden >= 1 and embed >= 2");
  }
  EncoderParams p = EncoderParams::zeros(dims);
  glorot_fill(p.w1, rng);
  glorot_fill(p.w2, rng);
  glorot_fill(p.v1, rng);
  glorot_fill(p.v2, rng);
  p.log_inv_temp = -std::log(kInitialTemperature);
  return p;
}

Encoding encode(const EncoderParams& params, Branch branch, std::span<const double> input,
                const Dropout& dropout) {
  const BranchRefs w = branch_of(params, branch);
  if (input.size() != w.in.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "encoder input has length " +
                                               std::to_string(input.size()) + ", expected " +
                                               std::to_string(w.in.rows()));
  }
  const std::size_t hidden = w.in.cols();
  const std::size_t embed = w.out.cols();

  Encoding enc;
  enc.branch = branch;
  enc.input.assign(input.begin(), input.end());
  enc.hidden_pre = w.in_bias;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double xi = input[i];
    if (xi == 0.0) continue;
    const auto row = w.in.row(i);
    for (std::size_t j = 0; j < hidden; ++j) enc.hidden_pre[j] += xi * row[j];
  }

  enc.hidden.resize(hidden);
  for (std::size_t j = 0; j < hidden; ++j) enc.hidden[j] = std::max(0.0, enc.hidden_pre[j]);
  if (dropout.rate > 0.0) {
    const double keep = 1.0 - dropout.rate;
    enc.dropout_scale.resize(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      enc.dropout_scale[j] = dropout.rng->uniform() < keep ? 1.0 / keep : 0.0;
      enc.hidden[j] *= enc.dropout_scale[j];
    }
  }

  Vector out = w.out_bias;
  for (std::size_t j = 0; j < hidden; ++j) {
    const double hj = enc.hidden[j];
    if (hj == 0.0) continue;
    const auto row = w.out.row(j);
    for (std::size_t k = 0; k < embed; ++k) out[k] += hj * row[k];
  }
  enc.out_norm = l2_norm(out);
  enc.embedding = l2_normalize(out);
  return enc;
}

void accumulate_backward(const EncoderParams& params, const Encoding& enc,
                         std::span<const double> d_embedding, ParamGrads& grads) {
  const BranchRefs w = branch_of(params, enc.branch);
  MutableBranch g = branch_of(grads, enc.branch);
  const std::size_t hidden = w.in.cols();
  const std::size_t embed = w.out.cols();
  if (d_embedding.size() != embed || enc.embedding.size() != embed) {
    throw Error(ErrorKind::kShapeMismatch, "upstream gradient does not match embedding size");
  }

  // dz = (I - e e^T) de / ||z||
  const double proj = dot(enc.embedding, d_embedding);
  Vector dz(embed);
  for (std::size_t k = 0; k < embed; ++k) {
    dz[k] = (d_embedding[k] - enc.embedding[k] * proj) / enc.out_norm;
  }

  Vector d_hidden(hidden, 0.0);
  for (std::size_t k = 0; k < embed; ++k) g.out_bias[k] += dz[k];
  for (std::size_t j = 0; j < hidden; ++j) {
    const auto w_row = w.out.row(j);
    const auto g_row = g.out.row(j);
    const double hj = enc.hidden[j];
    double acc = 0.0;
    for (std::size_t k = 0; k < embed; ++k) {
      g_row[k] += hj * dz[k];
      acc += w_row[k] * dz[k];
    }
    d_hidden[j] = acc;
  }

  // ReLU subgradient at 0 is 0.
  for (std::size_t j = 0; j < hidden; ++j) {
    double scale = enc.hidden_pre[j] > 0.0 ? 1.0 : 0.0;
    if (!enc.dropout_scale.empty()) scale *= enc.dropout_scale[j];
    d_hidden[j] *= scale;
    g.in_bias[j] += d_hidden[j];
  }
  for (std::size_t i = 0; i < enc.input.size(); ++i) {
    const double xi = enc.input[i];
    if (xi == 0.0) continue;
    const auto g_row = g.in.row(i);
    for (std::size_t j = 0; j < hidden; ++j) g_row[j] += xi * d_hidden[j];
  }
}

void accumulate_temperature_grad(const EncoderParams& params, double d_tau, ParamGrads& grads) {
  grads.log_inv_temp += d_tau * (-params.temperature());
}

ParamGrads backward(const EncoderParams& params, std::span<const Encoding> encodings,
                    std::span<const Vector> upstream, double d_tau) {
  if (encodings.size() != upstream.size()) {
    throw Error(ErrorKind::kShapeMismatch, "one upstream gradient per encoding required");
  }
  ParamGrads grads = EncoderParams::zeros(params.dims());
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    accumulate_backward(params, encodings[i], upstream[i], grads);
  }
  accumulate_temperature_grad(params, d_tau, grads);
  return grads;
}

std::uint64_t activation_digest(const Encoding& enc, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0xcbf29ce484222325ULL;
  for (double v : enc.hidden_pre) {
    h ^= v > 0.0 ? 1u : 0u;
    h *= kFnvPrime;
  }
  return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const EncoderDims d = ckpt.params.dims();
  nlohmann::ordered_json j;
  j["format"] = "cflab-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = ckpt.seed;
  j["dims"] = {{"image_dim", d.image_dim},
               {"vocab_size", d.vocab_size},
               {"hidden", d.hidden},
               {"embed", d.embed}};
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& t : ckpt.params.tensors()) {
    nlohmann::ordered_json jt;
    jt["name"] = t.name;
    jt["data"] = std::vector<double>(t.values.begin(), t.values.end());
    tensors.push_back(std::move(jt));
  }
  j["tensors"] = std::move(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint '" + path + "'");
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorKind::kIo, "short write on checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j = nlohmann::json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "cflab-checkpoint") {
    throw Error(ErrorKind::kFormat, "'" + path + "' is not a cflab checkpoint");
  }
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat, "unsupported checkpoint format version in '" + path +
                                        "' (expected " + std::to_string(kCheckpointVersion) +
                                        ")");
  }
  try {
    EncoderDims d;
    d.image_dim = j.at("dims").at("image_dim").get<std::size_t>();
    d.vocab_size = j.at("dims").at("vocab_size").get<std::size_t>();
    d.hidden = j.at("dims").at("hidden").get<std::size_t>();
    d.embed = j.at("dims").at("embed").get<std::size_t>();
    Checkpoint ckpt;
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.params = EncoderParams::zeros(d);
    auto tensors = ckpt.params.tensors();
    const auto& stored = j.at("tensors");
    if (stored.size() != tensors.size()) {
      throw Error(ErrorKind::kFormat, "checkpoint tensor count mismatch");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (stored[i].at("name").get<std::string>() != tensors[i].name) {
        throw Error(ErrorKind::kFormat, "checkpoint tensor order mismatch at " +
                                            std::string(tensors[i].name));
      }
      const auto data = stored[i].at("data").get<std::vector<double>>();
      if (data.size() != tensors[i].values.size()) {
        throw Error(ErrorKind::kFormat,
                    "checkpoint tensor " + std::string(tensors[i].name) + " has wrong size");
      }
      std::copy(data.begin(), data.end(), tensors[i].values.begin());
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace cflab
