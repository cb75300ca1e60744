// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "petfuse/error.hpp"
#include "petfuse/pet.hpp"
#include "petfuse/tokenizer.hpp"
#include "petfuse/training.hpp"
#include "support.hpp"

using namespace petfuse;

namespace {

// Fusion model over small precomputed features so optimizer runs are cheap.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vision = EncoderSpec::vision(EncoderKind::precomputed);
  cfg.vision.output_dim = 8;
  cfg.text = EncoderSpec::text(EncoderKind::precomputed, 0);
  cfg.text.output_dim = 6;
  cfg.fusion.vision_in = 8;
  cfg.fusion.text_in = 6;
  cfg.fusion.shared_dim = 4;
  cfg.fusion.head_hidden = 5;
  cfg.fusion.num_labels = 2;
  cfg.fusion.dropout = 0.2;
  cfg.vision_head.vision_in = 8;
  cfg.vision_head.num_labels = 2;
  cfg.declared_total_params = 0;
  return cfg;
}

std::vector<Example> tiny_examples(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.input.vision.resize(8);
    e.input.text_features.resize(6);
    for (auto& v : e.input.vision) v = r.normal();
    for (auto& v : e.input.text_features) v = r.normal();
    e.targets = {e.input.vision[0] > 0 ? 1.0 : 0.0, e.input.text_features[0] > 0.3 ? 1.0 : 0.0};
    out.push_back(std::move(e));
  }
  return out;
}

ModelConfig mini_config() {
  ModelConfig cfg;
  cfg.vision = EncoderSpec::vision(EncoderKind::mini_vision);
  cfg.vision.depth = 1;
  cfg.text = EncoderSpec::text(EncoderKind::mini_text, 0);
  cfg.text.depth = 1;
  cfg.fusion.shared_dim = 16;
  cfg.fusion.head_hidden = 8;
  return cfg;
}

std::vector<Example> mini_examples(const Model& m, std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  const std::vector<std::string> texts = {"no [FINDING] seen", "heart size normal", "clear lungs at [LOC]"};
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(2048);
    for (auto& x : v) x = r.normal();
    Example e;
    e.input = m.prepare(v, texts[i % 3]);
    e.targets.assign(14, 0.0);
    e.targets[i % 14] = 1.0;
    e.targets[(i * 7) % 14] = 1.0;
    out.push_back(std::move(e));
  }
  return out;
}

Vocabulary mini_vocab() {
  const std::vector<std::string> corpus = {"no [FINDING] seen", "heart size normal", "clear lungs at [LOC]"};
  return Vocabulary::build(corpus);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("bce loss examples") {
    auto half = bce_loss(ad::Tensor::zeros({2, 2}), ad::Tensor::from({2, 2}, {0, 1, 1, 0}));
    CHECK(half.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    auto sure = bce_loss(ad::Tensor::from({1, 1}, {60.0}), ad::Tensor::from({1, 1}, {1.0}));
    CHECK(sure.item() < 1e-20);
    CHECK_THROWS_AS(bce_loss(ad::Tensor::zeros({1, 1}), ad::Tensor::from({1, 1}, {0.5})), InputError);
    Rng r(1);
    auto z = petfuse::testing::random_tensor(r, {4, 3});
    auto y = ad::Tensor::from({4, 3}, {1, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1});
    CHECK(petfuse::testing::gradient_check([&] { return bce_loss(z, y); }, {z}) < 1e-6);
  }

  TEST_CASE("learning-rate schedule") {
    const std::size_t T = 1000, W = 100;
    const double peak = 1e-4;
    CHECK(lr_schedule(0, T, W, peak) == 0.0);
    CHECK(std::abs(lr_schedule(W, T, W, peak) - 1e-4) <= 1e-9);
    CHECK(std::abs(lr_schedule((W + T) / 2, T, W, peak) - 0.5e-4) <= 1e-9);
    CHECK(std::abs(lr_schedule(T, T, W, peak)) <= 1e-9);
    // Continuous at the end of warmup.
    CHECK(std::abs(lr_schedule(W - 1, T, W, peak) - lr_schedule(W, T, W, peak)) <= peak / W + 1e-15);
    CHECK_THROWS_AS(lr_schedule(T + 1, T, W, peak), ConfigError);
    CHECK_THROWS_AS(lr_schedule(0, T, T, peak), ConfigError);
  }

  TEST_CASE("gradient clipping") {
    std::vector<double> a = {0.3, 0.4};
    std::vector<std::span<double>> ga = {a};
    CHECK(clip_gradients(ga, 1.0) == doctest::Approx(0.5));
    CHECK(a == std::vector<double>{0.3, 0.4});
    std::vector<double> b = {3.0, 4.0};
    std::vector<std::span<double>> gb = {b};
    clip_gradients(gb, 1.0);
    CHECK(b[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(0.8).epsilon(1e-15));

    Rng r(2);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::vector<double>> store(1 + r.below(4));
      std::vector<std::span<double>> spans;
      for (auto& v : store) {
        v.resize(1 + r.below(20));
        for (auto& x : v) x = r.normal() * std::exp(3 * r.normal());
        spans.emplace_back(v);
      }
      clip_gradients(spans, 1.0);
      double sq = 0;
      for (auto& v : store) {
        for (double x : v) sq += x * x;
      }
      CHECK(std::sqrt(sq) <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("adamw closed forms and hand iteration") {
    auto make = [](double init) {
      ModelGraph g;
      g.add("w", "test", ParamRole::weight, ad::Tensor::from({1}, {init}), true);
      return g;
    };
    {
      ModelGraph g = make(0.7);
      AdamW opt(AdamWOptions{.weight_decay = 0.0});
      for (int i = 0; i < 3; ++i) opt.step(g, 1e-3);
      CHECK(g.tensor("w")[0] == 0.7);
    }
    {
      ModelGraph g = make(0.7);
      AdamW opt(AdamWOptions{.weight_decay = 1e-2});
      opt.step(g, 0.5);
      CHECK(g.tensor("w")[0] == 0.7 * (1 - 0.5 * 1e-2));
    }
    {
      ModelGraph g = make(1.0);
      AdamW opt(AdamWOptions{.weight_decay = 1e-2});
      const double grad = 0.25, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 1e-2;
      double p = 1.0, m = 0, v = 0;
      for (int t = 1; t <= 3; ++t) {
        g.at("w").tensor.mutable_grad()[0] = grad;
        opt.step(g, lr);
        p *= 1 - lr * wd;
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        p -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(std::abs(g.tensor("w")[0] - p) <= 1e-12);
      }
    }
    {
      ModelGraph g = make(1.0);
      g.set_trainable("w", false);
      AdamW opt;
      opt.step(g, 0.1);
      CHECK(opt.moments().empty());
      CHECK(g.tensor("w")[0] == 1.0);
    }
  }

  TEST_CASE("early stopping on a crafted plateau") {
    EarlyStopping es(5);
    const std::vector<double> trace = {0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7};
    std::size_t stopped_at = 0;
    for (std::size_t e = 0; e < trace.size(); ++e) {
      es.update(trace[e]);
      CHECK(es.since_improvement() <= 5);
      if (es.should_stop()) {
        stopped_at = e + 1;
        break;
      }
    }
    CHECK(stopped_at == 7);
    CHECK(es.best_epoch() == 2);

    // The same trace through the training loop restores the epoch-2 parameters.
    Model m(tiny_config(), Vocabulary{}, 1);
    const auto data = tiny_examples(40, 2);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.batch = 8;
    std::map<std::size_t, std::map<std::string, std::vector<double>>> per_epoch;
    TrainHooks hooks;
    hooks.validator = [&](std::size_t epoch) -> std::optional<double> {
      per_epoch[epoch] = snapshot_trainable(m.graph());
      return epoch <= trace.size() ? trace[epoch - 1] : 0.0;
    };
    const auto res = train(m, data, {}, cfg, hooks);
    CHECK(res.history.size() == 7);
    CHECK(res.best_epoch == 2);
    CHECK(res.stopped_early);
    CHECK(snapshot_trainable(m.graph()) == per_epoch[2]);
    CHECK(per_epoch[2] != per_epoch[7]);
  }

  TEST_CASE("one epoch means one validation pass") {
    Model m(tiny_config(), Vocabulary{}, 1);
    const auto data = tiny_examples(20, 3);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    std::size_t calls = 0;
    TrainHooks hooks;
    hooks.validator = [&](std::size_t) -> std::optional<double> {
      ++calls;
      return 0.5;
    };
    const auto res = train(m, data, {}, cfg, hooks);
    CHECK(res.history.size() == 1);
    CHECK(calls == 1);
    CHECK_THROWS_AS(train(m, {}, data, cfg), InputError);
  }

  TEST_CASE("accumulation matches the equivalent large batch") {
    const auto data = tiny_examples(70, 4);
    const auto val = tiny_examples(20, 5);
    auto run = [&](std::size_t batch, std::size_t accum) {
      Model m(tiny_config(), Vocabulary{}, 7);
      TrainConfig cfg;
      cfg.lr = 1e-2;
      cfg.batch = batch;
      cfg.accumulation = accum;
      cfg.max_epochs = 3;
      cfg.seed = 11;
      TrainHooks hooks;
      std::vector<std::map<std::string, std::vector<double>>> traj;
      hooks.validator = [&](std::size_t) -> std::optional<double> {
        traj.push_back(snapshot_trainable(m.graph()));
        return 0.5 + 0.01 * static_cast<double>(traj.size());
      };
      train(m, data, val, cfg, hooks);
      return traj;
    };
    const auto a = run(16, 2);
    const auto b = run(32, 1);
    REQUIRE(a.size() == b.size());
    double worst = 0;
    for (std::size_t e = 0; e < a.size(); ++e) {
      for (const auto& [addr, v] : a[e]) {
        const auto& w = b[e].at(addr);
        for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(v[i] - w[i]));
      }
    }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("frozen tensors never change and runs are reproducible") {
    const auto vocab = mini_vocab();
    auto run = [&](std::vector<EpochRecord>& history) {
      Model m(mini_config(), vocab, 3);
      apply_policy(m, PetConfig{}, Rng(1));
      std::map<std::string, std::vector<double>> frozen;
      for (const auto& p : m.graph().parameters()) {
        if (!p.trainable()) frozen.emplace(p.address, std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
      }
      const auto data = mini_examples(m, 24, 5);
      TrainConfig cfg;
      cfg.batch = 8;
      cfg.max_epochs = 2;
      cfg.lr = 1e-3;
      history = train(m, data, data, cfg).history;
      for (const auto& p : m.graph().parameters()) {
        if (!p.trainable()) CHECK(std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()) == frozen.at(p.address));
      }
    };
    std::vector<EpochRecord> h1, h2;
    run(h1);
    run(h2);
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
      CHECK(h1[i].train_loss == h2[i].train_loss);
      CHECK(h1[i].val_auroc == h2[i].val_auroc);
      CHECK(h1[i].lr == h2[i].lr);
    }
  }

  TEST_CASE("bitfit and lora invariants over fifty steps") {
    const auto vocab = mini_vocab();
    for (auto policy : {PetPolicy::bitfit, PetPolicy::lora}) {
      Model m(mini_config(), vocab, 3);
      PetConfig pc;
      pc.policy = policy;
      apply_policy(m, pc, Rng(2));
      std::map<std::string, std::vector<double>> before;
      for (const auto& p : m.graph().parameters()) {
        before.emplace(p.address, std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
      }
      const auto data = mini_examples(m, 50, 6);
      TrainConfig cfg;
      cfg.batch = 1;
      cfg.accumulation = 1;
      cfg.max_epochs = 1;
      cfg.lr = 1e-2;
      cfg.warmup_fraction = 0.0;
      std::uint64_t steps = 0;
      TrainHooks hooks;
      hooks.validator = [](std::size_t) -> std::optional<double> { return 0.5; };
      AdamW opt(AdamWOptions{.weight_decay = cfg.weight_decay});
      train(m, data, {}, cfg, opt, hooks);
      steps = opt.steps();
      CHECK(steps == 50);
      bool some_bias_moved = false;
      for (const auto& p : m.graph().parameters()) {
        const bool encoder = p.address.rfind("fusion.", 0) != 0;
        const std::vector<double> now(p.tensor.data().begin(), p.tensor.data().end());
        if (encoder && (p.role == ParamRole::weight || p.role == ParamRole::embedding)) {
          CHECK(now == before.at(p.address));
        }
        if (encoder && p.role == ParamRole::bias && now != before.at(p.address)) some_bias_moved = true;
      }
      if (policy == PetPolicy::bitfit) CHECK(some_bias_moved);
      if (policy == PetPolicy::lora) {
        std::size_t injected = 0;
        for (const auto& h : m.graph().hooks()) {
          const auto* inj = m.graph().lora(h.address);
          if (!inj) continue;
          ++injected;
          const auto& a = inj->a;
          const auto& b = inj->b;
          Eigen::MatrixXd A(a.rows(), a.cols()), B(b.rows(), b.cols());
          for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < a.cols(); ++j) A(i, j) = a.at(i, j);
          for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) B(i, j) = b.at(i, j);
          const Eigen::MatrixXd delta = inj->scaling * A * B;
          CHECK(delta.norm() > 0.0);
          Eigen::FullPivLU<Eigen::MatrixXd> lu(delta);
          lu.setThreshold(1e-10);
          CHECK(lu.rank() <= 8);
        }
        CHECK(injected == 8);
      }
    }
  }

  TEST_CASE("checkpoint round trip") {
    Model m(tiny_config(), Vocabulary{}, 1);
    const auto data = tiny_examples(30, 8);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.lr = 1e-2;
    AdamW opt;
    train(m, data, data, cfg, opt);
    const auto path = std::filesystem::temp_directory_path() / "petfuse_ckpt_test.bin";
    save_checkpoint(path, m.graph(), opt, {{"note", "x"}});
    const auto ck = load_checkpoint(path);
    CHECK(ck.meta["note"] == "x");
    CHECK(ck.tensors == snapshot_trainable(m.graph()));
    CHECK(ck.optimizer_steps == opt.steps());
    REQUIRE(ck.moments.size() == opt.moments().size());
    for (const auto& [addr, mom] : opt.moments()) {
      CHECK(ck.moments.at(addr).m == mom.m);
      CHECK(ck.moments.at(addr).v == mom.v);
    }
    Model fresh(tiny_config(), Vocabulary{}, 99);
    restore_values(fresh.graph(), ck.tensors);
    CHECK(predict_logits(fresh, data) == predict_logits(m, data));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), InputError);
  }
}

TEST_SUITE("training") {
  TEST_CASE("feature norm standardizes and round-trips") {
    Rng rng(31);
    std::vector<std::vector<double>> rows(50, std::vector<double>(4));
    for (auto& r : rows) {
      r[0] = 3.0 + 0.01 * rng.normal();
      r[1] = -2.0 + 5.0 * rng.normal();
      r[2] = 7.0;  // constant
      r[3] = rng.uniform(0.0, 1.0);
    }
    const auto n = FeatureNorm::fit(rows);
    CHECK(n.scale[2] == 1.0);
    for (std::size_t j : {0u, 1u, 3u}) {
      double m = 0, v = 0;
      for (const auto& r : rows) m += (r[j] - n.mean[j]) * n.scale[j];
      m /= rows.size();
      for (const auto& r : rows) v += std::pow((r[j] - n.mean[j]) * n.scale[j] - m, 2);
      CHECK(std::abs(m) < 1e-12);
      CHECK(v / rows.size() == doctest::Approx(1.0).epsilon(1e-9));
    }
    const auto back = FeatureNorm::from_json(nlohmann::json::parse(n.to_json().dump()));
    CHECK(back.mean == n.mean);
    CHECK(back.scale == n.scale);
    CHECK_THROWS_AS(FeatureNorm::fit(std::vector<std::vector<double>>{}), InputError);
  }

  TEST_CASE("fitted norms feed the model and keep encoders frozen") {
    ModelConfig cfg;
    cfg.text.max_len = 16;
    Vocabulary vocab = Vocabulary::build(std::vector<std::string>{"effusion at left base", "clear lungs"});
    Model model(cfg, vocab, 5);
    Rng rng(8);
    std::vector<ModelInput> inputs;
    for (const char* t : {"effusion at left base", "clear lungs", "effusion", "left base clear"}) {
      std::vector<double> v(kVisionFeatureDim);
      for (auto& x : v) x = rng.normal();
      inputs.push_back(model.prepare(v, t));
    }
    const auto before = snapshot_trainable(model.graph());
    model.fit_feature_norms(inputs);
    CHECK(snapshot_trainable(model.graph()) == before);
    REQUIRE_FALSE(model.text_norm().empty());
    double mean0 = 0;
    for (const auto& in : inputs) mean0 += model.encode(in).text.data()[0];
    CHECK(std::abs(mean0 / inputs.size()) < 1e-9);
  }
}
