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

#ifndef CFLAB_NUMERICS_HPP_
#define CFLAB_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cflab {

/// Error categories raised across the library. Every failure the library
/// reports is a cflab::Error carrying one of these.
enum class ErrorKind {
  kZeroNorm,
  kLengthMismatch,
  kShapeMismatch,
  kNoLegalEdit,
  kEmptyCounterfactuals,
  kDatasetTooSmall,
  kEmptyEvalSet,
  kKTooLarge,
  kKeyMismatch,
  kNonFinite,
  kInvalidScene,
  kInvalidConfig,
  kFormat,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Below this norm a vector has no usable direction.
inline constexpr double kZeroNormThreshold = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);

/// Unit-length copy of v. Throws ErrorKind::kZeroNorm when ||v|| <= 1e-12.
Vector l2_normalize(std::span<const double> v);

/// Numerically stable log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);

/// Max-subtracted softmax.
Vector softmax_row(std::span<const double> logits);

/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

/// Central-difference gradient of f at x with step h in [1e-6, 1e-3].
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                        double h);

/// xoshiro256** seeded through splitmix64.
///
/// The algorithm is fixed so a seed names the same stream on every platform.
/// Gaussian draws use Box-Muller and depend on the platform libm only through
/// log, sqrt and cos.
class Prng {
 public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  double normal();

  /// Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cflab

#endif  // CFLAB_NUMERICS_HPP_
