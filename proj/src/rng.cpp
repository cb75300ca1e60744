// SPDX-License-Identifier: Apache-2.0
#include "petfuse/rng.hpp"

#include <cmath>
#include <numbers>

namespace petfuse {

double Rng::normal() {
  // Box-Muller on two fresh draws; no cached second variate so the stream
  // position stays a simple function of the number of calls.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace petfuse
