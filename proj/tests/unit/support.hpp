// SPDX-License-Identifier: Apache-2.0
// Shared helpers for unit tests: random tensors and finite-difference checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "petfuse/rng.hpp"
#include "petfuse/tensor.hpp"

namespace petfuse::testing {

inline ad::Tensor random_tensor(Rng& rng, ad::Shape shape, bool requires_grad = true, double scale = 1.0) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Norm-wise relative error.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  // The floor keeps identically-zero gradients (e.g. dead branches) from
  // turning rounding noise into a large relative error.
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-7});
}

/// Largest relative error between analytic and central-difference gradients
/// of the scalar `loss()` with respect to each tensor in `inputs`.
inline double gradient_check(const std::function<ad::Tensor()>& loss, std::vector<ad::Tensor> inputs,
                             double step = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  ad::backward(loss());
  double worst = 0;
  for (auto& t : inputs) {
    const auto analytic = t.grad();
    std::vector<double> numeric(t.size());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      double up, down;
      {
        ad::NoGradGuard guard;
        up = loss().item();
      }
      data[i] = saved - step;
      {
        ad::NoGradGuard guard;
        down = loss().item();
      }
      data[i] = saved;
      numeric[i] = (up - down) / (2 * step);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace petfuse::testing
