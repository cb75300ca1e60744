// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "petfuse/error.hpp"
#include "petfuse/fusion.hpp"
#include "petfuse/pet.hpp"
#include "support.hpp"

using namespace petfuse;
using petfuse::testing::gradient_check;
using petfuse::testing::random_tensor;

namespace {

std::uint64_t component_count(const BudgetReport& r, const std::string& name) {
  for (const auto& c : r.components) {
    if (c.component == name) return c.trainable;
  }
  return 0;
}

FusionConfig small_config() {
  FusionConfig cfg;
  cfg.vision_in = 6;
  cfg.text_in = 5;
  cfg.shared_dim = 4;
  cfg.head_hidden = 3;
  cfg.num_labels = 2;
  return cfg;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("default parameterization matches the expected breakdown") {
    ModelGraph g;
    build_fusion(g, FusionConfig{}, Rng(1));
    const auto r = count_params(g, 94'300'000);
    CHECK(component_count(r, kVisionProjection) == 1'048'576);
    CHECK(component_count(r, kCrossModalAttention) == 786'432);
    CHECK(component_count(r, kTextProjection) == 393'216);
    CHECK(component_count(r, kClassificationHead) == 134'656);
    CHECK(r.trainable == 2'362'880);
    CHECK(r.total == 2'362'880);
    CHECK(FusionConfig{}.parameter_count() == 2'362'880);
    CHECK(r.to_json()["efficiency_pct"] == "2.51");
    CHECK(r.efficiency_pct() == doctest::Approx(2.5057).epsilon(1e-4));
    for (const auto& p : g.parameters()) CHECK(p.role == ParamRole::weight);
  }

  TEST_CASE("closed-form counts") {
    FusionConfig tiny;
    tiny.shared_dim = 1;
    tiny.head_hidden = 1;
    tiny.num_labels = 1;
    ModelGraph g;
    build_fusion(g, tiny, Rng(1));
    CHECK(count_params(g).trainable == 2'821);
    CHECK(tiny.parameter_count() == 2'821);
    CHECK(VisionHeadConfig{}.parameter_count() == 1'055'744);
    ModelGraph vh;
    build_vision_head(vh, VisionHeadConfig{}, Rng(1));
    CHECK(count_params(vh).trainable == 1'055'744);
  }

  TEST_CASE("zero inputs map to zero logits and eval mode is deterministic") {
    ModelGraph g;
    const FusionConfig cfg;
    build_fusion(g, cfg, Rng(2));
    auto zv = ad::Tensor::zeros({2, 2048});
    auto zt = ad::Tensor::zeros({2, 768});
    const auto logits = fuse_forward(g, cfg, zv, zt, false, {});
    REQUIRE(logits.shape() == ad::Shape{2, 14});
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0);

    Rng r(3);
    auto v = random_tensor(r, {1, 2048}, false);
    auto t = random_tensor(r, {1, 768}, false);
    const auto a = fuse_forward(g, cfg, v, t, false, {});
    const auto b = fuse_forward(g, cfg, v, t, false, {});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  TEST_CASE("both modalities influence the logits") {
    const auto cfg = small_config();
    ModelGraph g;
    build_fusion(g, cfg, Rng(4));
    Rng r(5);
    auto v = random_tensor(r, {1, 6}, false);
    auto t = random_tensor(r, {1, 5}, false);
    const auto base = fuse_forward(g, cfg, v, t, false, {});
    auto changed = [&](const ad::Tensor& other) {
      double d = 0;
      for (std::size_t i = 0; i < base.size(); ++i) d += std::abs(base[i] - other[i]);
      return d > 1e-9;
    };
    auto v2 = v.detach();
    v2.mutable_data()[0] += 0.5;
    auto t2 = t.detach();
    t2.mutable_data()[0] += 0.5;
    CHECK(changed(fuse_forward(g, cfg, v2, t, false, {})));
    CHECK(changed(fuse_forward(g, cfg, v, t2, false, {})));
  }

  TEST_CASE("gradients of every fusion tensor match finite differences") {
    const auto cfg = small_config();
    ModelGraph g;
    build_fusion(g, cfg, Rng(6));
    Rng r(7);
    auto v = random_tensor(r, {3, 6}, false);
    auto t = random_tensor(r, {3, 5}, false);
    auto targets = ad::Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
    std::vector<ad::Tensor> params;
    for (const auto& p : g.parameters()) params.push_back(p.tensor);
    for (bool training : {false, true}) {
      const Rng base(8);
      auto loss = [&] {
        std::vector<Rng> streams = {base.split(std::uint64_t{0}), base.split(1), base.split(2)};
        return ad::bce_with_logits(fuse_forward(g, cfg, v, t, training, streams), targets);
      };
      CHECK(gradient_check(loss, params) < 1e-4);
    }
  }

  TEST_CASE("attention over a single text position has weight one") {
    Rng r(9);
    const auto w = ad::attention_weights(random_tensor(r, {1, 4}, false), random_tensor(r, {1, 4}, false), 0.5);
    REQUIRE(w.size() == 1);
    CHECK(w[0] == 1.0);
  }

  TEST_CASE("shape and config errors") {
    const auto cfg = small_config();
    ModelGraph g;
    build_fusion(g, cfg, Rng(10));
    CHECK_THROWS_AS(fuse_forward(g, cfg, ad::Tensor::zeros({1, 7}), ad::Tensor::zeros({1, 5}), false, {}),
                    DimensionError);
    CHECK_THROWS_AS(fuse_forward(g, cfg, ad::Tensor::zeros({1, 6}), ad::Tensor::zeros({2, 5}), false, {}),
                    DimensionError);
    FusionConfig bad;
    bad.shared_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = FusionConfig{};
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}
