// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "petfuse/rng.hpp"

using petfuse::Rng;

TEST_SUITE("rng") {
  TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  }

  TEST_CASE("named splits are independent of parent consumption") {
    Rng parent(7);
    const auto child_before = parent.split("dropout").next_u64();
    for (int i = 0; i < 10; ++i) parent.next_u64();
    CHECK(parent.split("dropout").next_u64() == child_before);
    CHECK(parent.split("dropout").next_u64() != parent.split("init").next_u64());
    CHECK(parent.split(std::uint64_t{0}).next_u64() != parent.split(std::uint64_t{1}).next_u64());
  }

  TEST_CASE("state round trip resumes the stream") {
    Rng a(3);
    a.uniform();
    a.uniform();
    Rng b = Rng::from_state(a.key(), a.counter());
    CHECK(a.next_u64() == b.next_u64());
  }

  TEST_CASE("uniform and normal moments") {
    Rng r(11);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
      const double u = r.uniform();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      su += u;
      const double z = r.normal();
      sn += z;
      sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  }

  TEST_CASE("below covers its range and shuffle permutes") {
    Rng r(5);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
      const auto v = r.below(7);
      REQUIRE(v < 7);
      seen.insert(v);
    }
    CHECK(seen.size() == 7);
    std::vector<int> items(20);
    std::iota(items.begin(), items.end(), 0);
    r.shuffle(std::span<int>(items));
    std::vector<int> sorted = items;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
  }
}
