// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "petfuse/error.hpp"
#include "petfuse/tensor.hpp"
#include "support.hpp"

using namespace petfuse;
using namespace petfuse::ad;
using petfuse::testing::gradient_check;
using petfuse::testing::random_tensor;

namespace {

// Projects a tensor to a scalar with fixed random weights so every output
// element carries a distinct upstream gradient.
Tensor weighted_sum(const Tensor& x, std::uint64_t seed = 99) {
  Rng r(seed);
  std::vector<double> w(x.size());
  for (auto& v : w) v = r.normal();
  return sum(mul(x, Tensor::from(x.shape(), w)));
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("matmul examples") {
    auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto p = matmul(eye, eye);
    for (std::size_t i = 0; i < 9; ++i) CHECK(p[i] == eye[i]);
    auto z = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::zeros({2, 2}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(z[i] == 0.0);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  }

  TEST_CASE("matmul gradient matches finite differences") {
    Rng r(1);
    auto a = random_tensor(r, {4, 5});
    auto b = random_tensor(r, {5, 3});
    CHECK(gradient_check([&] { return weighted_sum(matmul(a, b)); }, {a, b}) < 1e-6);
  }

  TEST_CASE("softmax attention examples") {
    Rng r(2);
    auto q = random_tensor(r, {1, 4}, false);
    auto k = random_tensor(r, {1, 4}, false);
    auto v = random_tensor(r, {1, 4}, false);
    auto out = softmax_attention(q, k, v, 0.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-15));

    // Equal scores: uniform average of the value rows.
    auto qz = Tensor::zeros({2, 3});
    auto k3 = random_tensor(r, {3, 3}, false);
    auto v3 = random_tensor(r, {3, 2}, false);
    auto avg = softmax_attention(qz, k3, v3, 1.0);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        const double expect = (v3.at(0, c) + v3.at(1, c) + v3.at(2, c)) / 3.0;
        CHECK(avg.at(i, c) == doctest::Approx(expect).epsilon(1e-12));
      }
    }

    auto w = attention_weights(random_tensor(r, {3, 4}, false), random_tensor(r, {5, 4}, false), 0.5);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += w[i * 5 + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    auto bad = Tensor::from({1, 2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax_attention(bad, k.detach(), v.detach(), 1.0), std::exception);
  }

  TEST_CASE("softmax attention gradient") {
    Rng r(3);
    auto q = random_tensor(r, {2, 4});
    auto k = random_tensor(r, {2, 4});
    auto v = random_tensor(r, {2, 4});
    CHECK(gradient_check([&] { return weighted_sum(softmax_attention(q, k, v, 0.5)); }, {q, k, v}) < 1e-6);
    auto k5 = random_tensor(r, {5, 4});
    auto v5 = random_tensor(r, {5, 3});
    CHECK(gradient_check([&] { return weighted_sum(softmax_attention(q, k5, v5, 0.5)); }, {q, k5, v5}) < 1e-4);
  }

  TEST_CASE("layer norm examples") {
    auto c = layer_norm(Tensor::from({1, 4}, {3, 3, 3, 3}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(c[i] == 0.0);
    auto pm = layer_norm(Tensor::from({1, 2}, {1, -1}));
    CHECK(pm[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(pm[1] == doctest::Approx(-1.0).epsilon(1e-5));

    Rng r(4);
    auto x = random_tensor(r, {1, 64}, false, 3.0);
    auto y = layer_norm(x, 0.0);
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 64; ++i) mu += y[i];
    mu /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += (y[i] - mu) * (y[i] - mu);
    var /= 64;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
    CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 1})), DimensionError);
  }

  TEST_CASE("dropout examples") {
    Rng r(5);
    auto x = Tensor::from({1, 8}, std::vector<double>(8, 2.0));
    auto same = dropout(x, 0.0, true, r);
    for (std::size_t i = 0; i < 8; ++i) CHECK(same[i] == 2.0);
    auto eval = dropout(x, 0.1, false, r);
    for (std::size_t i = 0; i < 8; ++i) CHECK(eval[i] == 2.0);
    CHECK_THROWS_AS(dropout(x, 1.0, true, r), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, true, r), ConfigError);

    const std::size_t n = 100000;
    auto ones = Tensor::from({n}, std::vector<double>(n, 1.0));
    auto d = dropout(ones, 0.1, true, r);
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += d[i];
    m /= static_cast<double>(n);
    // Each element is 0 or 1/0.9; its standard deviation is sqrt(p/(1-p)).
    const double sigma = std::sqrt(0.1 / 0.9) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(m - 1.0) < 3 * sigma);
  }

  TEST_CASE("every differentiable op passes finite differences") {
    Rng r(6);
    for (int trial = 0; trial < 5; ++trial) {
      auto a = random_tensor(r, {3, 4});
      auto b = random_tensor(r, {3, 4});
      auto bias = random_tensor(r, {4});
      auto table = random_tensor(r, {5, 4});
      std::vector<std::size_t> idx = {4, 0, 4};
      auto targets = Tensor::from({3, 4}, {1, 0, 1, 0, 0, 0, 1, 1, 1, 1, 0, 0});
      std::vector<double> pw = {1.0, 2.0, 0.5, 3.0};

      CHECK(gradient_check([&] { return weighted_sum(add(a, b)); }, {a, b}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(add_bias(a, bias)); }, {a, bias}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(scale(a, -1.7)); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(mul(a, b)); }, {a, b}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(relu(a)); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return mean(a); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(layer_norm(a)); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(reshape(a, {2, 6})); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(mean_rows(a)); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(row(a, 1)); }, {a}) < 1e-4);
      CHECK(gradient_check(
                [&] {
                  std::vector<Tensor> rows = {row(a, 2), row(b, 0)};
                  return weighted_sum(stack_rows(rows));
                },
                {a, b}) < 1e-4);
      CHECK(gradient_check([&] { return weighted_sum(gather_rows(table, idx)); }, {table}) < 1e-4);
      CHECK(gradient_check([&] { return bce_with_logits(a, targets); }, {a}) < 1e-4);
      CHECK(gradient_check([&] { return bce_with_logits(a, targets, pw); }, {a}) < 1e-4);
      Rng fixed(123);
      CHECK(gradient_check(
                [&] {
                  Rng s = fixed;  // same mask on every evaluation
                  return weighted_sum(dropout(a, 0.3, true, s));
                },
                {a}) < 1e-4);
    }
  }

  TEST_CASE("shared subexpressions are visited once") {
    auto x = Tensor::from({1, 3}, {1.0, -2.0, 0.5}, true);
    auto y = mul(x, x);
    auto loss = sum(add(y, y));  // d/dx = 4x
    backward(loss);
    const auto g = x.grad();
    CHECK(g[0] == doctest::Approx(4.0));
    CHECK(g[1] == doctest::Approx(-8.0));
    CHECK(g[2] == doctest::Approx(2.0));
  }

  TEST_CASE("backward is linear in the loss") {
    Rng r(7);
    auto a = random_tensor(r, {3, 3});
    auto b = random_tensor(r, {3, 3});
    auto f = [&] { return weighted_sum(relu(matmul(a, b)), 1); };
    auto g = [&] { return weighted_sum(layer_norm(add(a, b)), 2); };

    backward(f());
    backward(g());  // leaf gradients accumulate
    const auto separate_a = a.grad();
    a.zero_grad();
    b.zero_grad();
    backward(add(f(), g()));
    const auto joint_a = a.grad();
    for (std::size_t i = 0; i < joint_a.size(); ++i) CHECK(joint_a[i] == doctest::Approx(separate_a[i]).epsilon(1e-12));
  }

  TEST_CASE("forward with a fixed seed is bit-reproducible") {
    auto run = [] {
      Rng r(8);
      auto a = random_tensor(r, {4, 6}, false);
      auto b = random_tensor(r, {6, 6}, false);
      Rng drop = r.split("dropout");
      return dropout(layer_norm(matmul(a, b)), 0.1, true, drop);
    };
    auto x = run();
    auto y = run();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == y[i]);
  }

  TEST_CASE("no-grad guard records no history") {
    auto a = Tensor::from({1, 2}, {1, 2}, true);
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      auto y = scale(a, 2.0);
      CHECK_FALSE(y.requires_grad());
    }
    CHECK(grad_enabled());
  }

  TEST_CASE("bce is stable for extreme logits") {
    auto logits = Tensor::from({1, 2}, {800.0, -800.0});
    auto targets = Tensor::from({1, 2}, {0.0, 1.0});
    const double l = bce_with_logits(logits, targets).item();
    CHECK(l == doctest::Approx(800.0));
    auto nan_logits = Tensor::from({1, 1}, {std::nan("")});
    CHECK_THROWS_AS(bce_with_logits(nan_logits, Tensor::zeros({1, 1})), NumericError);
  }
}
