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


#include "doctest.h"
#include "property_checks.hpp"

using cflab::testing::PropertyCheck;
using cflab::testing::PropertyResult;

TEST_SUITE("properties") {
  TEST_CASE("invariants hold on 500 random cases each") {
    std::vector<PropertyCheck> all = cflab::testing::acceptance_properties();
    for (auto& p : cflab::testing::extra_properties()) all.push_back(p);
    std::uint64_t seed = 1000;
    for (const PropertyCheck& check : all) {
      const PropertyResult r = check.run(seed++, 500);
      INFO(r.name, ": ", r.failures, " of ", r.cases, " failed, worst ", r.worst);
      CHECK(r.cases == 500);
      CHECK(r.failures == 0);
    }
  }
}
