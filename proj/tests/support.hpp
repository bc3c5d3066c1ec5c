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


// Shared helpers for the test binaries.

#ifndef CFLAB_TESTS_SUPPORT_HPP_
#define CFLAB_TESTS_SUPPORT_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cflab/numerics.hpp"
#include "doctest.h"

namespace cflab::testing {

inline Vector random_vector(Prng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Vector random_unit(Prng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::size_t count_diffs(const Vector& a, const Vector& b) {
  REQUIRE(a.size() == b.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected a cflab::Error");
  return ErrorKind::kIo;
}

}  // namespace cflab::testing

#endif  // CFLAB_TESTS_SUPPORT_HPP_
