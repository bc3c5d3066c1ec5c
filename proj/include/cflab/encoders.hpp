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

// Dual two-layer perceptron encoders onto the unit sphere, with exact
// backward passes and a learnable log-parameterized temperature.
//
//   e = normalize(W2 relu(W1 x + b1) + b2)        image branch
//   e = normalize(V2 relu(V1 t + c1) + c2)        text branch
//
// Matrices are stored input-major: W1 is (D x h), W2 is (h x d).

#ifndef CFLAB_ENCODERS_HPP_
#define CFLAB_ENCODERS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cflab/numerics.hpp"
#include "cflab/world.hpp"

namespace cflab {

inline constexpr double kInitialTemperature = 0.07;
inline constexpr double kMinTemperature = 0.01;
inline constexpr double kMaxTemperature = 1.0;

struct EncoderDims {
  std::size_t image_dim = kImageDim;
  std::size_t vocab_size = 0;
  std::size_t hidden = 128;
  std::size_t embed = 64;
  bool operator==(const EncoderDims&) const = default;
};

struct NamedTensor {
  std::string_view name;
  std::span<double> values;
};

struct ConstNamedTensor {
  std::string_view name;
  std::span<const double> values;
};

struct EncoderParams {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Matrix v1;
  Vector c1;
  Matrix v2;
  Vector c2;
  // tau = exp(-log_inv_temp), so tau > 0 for any finite value.
  double log_inv_temp = 0.0;

  EncoderDims dims() const;
  double temperature() const;
  /// Projects tau back into [0.01, 1.0].
  void clamp_temperature();

  /// Same shapes, all zeros (and log_inv_temp = 0). Used for gradients.
  static EncoderParams zeros(const EncoderDims& dims);

  /// Fixed order: w1 b1 w2 b2 v1 c1 v2 c2 log_inv_temp.
  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;

  bool operator==(const EncoderParams&) const = default;
};

/// Gradients share the parameter layout; log_inv_temp holds dL/d(log_inv_temp).
using ParamGrads = EncoderParams;

/// Glorot-uniform weights, zero biases, tau = 0.07. Requires hidden >= 1 and
/// embed >= 2.
EncoderParams init_params(Prng& rng, const EncoderDims& dims);

enum class Branch { kImage, kText };

/// Inverted dropout on the hidden layer. rate == 0 disables it and consumes
/// no randomness.
struct Dropout {
  double rate = 0.0;
  Prng* rng = nullptr;
};

/// Forward result plus everything the backward pass needs.
struct Encoding {
  Branch branch = Branch::kImage;
  Vector embedding;
  Vector input;
  Vector hidden_pre;
  Vector hidden;
  Vector dropout_scale;  // empty when dropout is off
  double out_norm = 0.0;
};

/// Throws ErrorKind::kShapeMismatch on a wrong input length and
/// ErrorKind::kZeroNorm when the pre-normalization output vanishes.
Encoding encode(const EncoderParams& params, Branch branch, std::span<const double> input,
                const Dropout& dropout = {});
inline Encoding encode_image(const EncoderParams& p, std::span<const double> x,
                             const Dropout& dropout = {}) {
  return encode(p, Branch::kImage, x, dropout);
}
inline Encoding encode_text(const EncoderParams& p, std::span<const double> t,
                            const Dropout& dropout = {}) {
  return encode(p, Branch::kText, t, dropout);
}

/// Adds the parameter gradient of <d_embedding, e> for one encoding into
/// grads, through the normalization Jacobian (I - e e^T) / ||z||.
void accumulate_backward(const EncoderParams& params, const Encoding& enc,
                         std::span<const double> d_embedding, ParamGrads& grads);

/// Batch backward: sums per-encoding contributions in index order and maps
/// dL/dtau onto the log-temperature.
ParamGrads backward(const EncoderParams& params, std::span<const Encoding> encodings,
                    std::span<const Vector> upstream, double d_tau);

/// Adds dL/dtau to the log-temperature gradient (dtau/dlog_inv_temp = -tau).
void accumulate_temperature_grad(const EncoderParams& params, double d_tau, ParamGrads& grads);

/// 64-bit FNV-1a digest of the ReLU activation pattern of an encoding.
std::uint64_t activation_digest(const Encoding& enc, std::uint64_t seed);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams params;
  std::uint64_t seed = 0;
};

/// JSON container with format tag, version, dims, seed and named tensors.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws ErrorKind::kFormat on a foreign or wrong-version file, ErrorKind::kIo
/// when unreadable.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cflab

#endif  // CFLAB_ENCODERS_HPP_
