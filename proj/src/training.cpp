// SPDX-License-Identifier: Apache-2.0
#include "petfuse/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "petfuse/error.hpp"
#include "petfuse/metrics.hpp"

namespace petfuse {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (batch == 0) throw ConfigError("train.batch must be >= 1");
  if (accumulation == 0) throw ConfigError("train.accumulation must be >= 1");
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("train.patience must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("train.warmup_fraction must be in [0, 1)");
}

ad::Tensor bce_loss(const ad::Tensor& logits, const ad::Tensor& targets, std::span<const double> pos_weight) {
  for (double y : targets.data()) {
    if (y != 0.0 && y != 1.0) throw InputError("bce targets must be 0 or 1");
  }
  return ad::bce_with_logits(logits, targets, pos_weight);
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak) {
  if (total_steps == 0 || step > total_steps) throw ConfigError("lr_schedule: step outside [0, total_steps]");
  if (warmup_steps >= total_steps) throw ConfigError("lr_schedule: warmup must be shorter than the run");
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_gradients(std::span<const std::span<double>> grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& g : grads) {
      for (double& v : g) v *= s;
    }
  }
  return norm;
}

void AdamW::step(ModelGraph& graph, double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (auto& p : graph.parameters()) {
    if (!p.trainable()) continue;
    auto value = p.tensor.mutable_data();
    auto grad = p.tensor.mutable_grad();
    auto& mom = moments_[p.address];
    if (mom.m.size() != value.size()) {
      mom.m.assign(value.size(), 0.0);
      mom.v.assign(value.size(), 0.0);
    }
    const double decay = 1.0 - lr * options_.weight_decay;
    for (std::size_t i = 0; i < value.size(); ++i) {
      value[i] *= decay;
      mom.m[i] = options_.beta1 * mom.m[i] + (1.0 - options_.beta1) * grad[i];
      mom.v[i] = options_.beta2 * mom.v[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

void AdamW::restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

bool EarlyStopping::update(std::optional<double> score) {
  ++epoch_;
  const bool better = score && (!best_ || *score > *best_);
  if (better || best_epoch_ == 0) {
    if (score) best_ = score;
    best_epoch_ = epoch_;
    since_improvement_ = 0;
    return true;
  }
  ++since_improvement_;
  return false;
}

std::map<std::string, std::vector<double>> snapshot_trainable(const ModelGraph& graph) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : graph.parameters()) {
    if (p.trainable()) out.emplace(p.address, std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
  }
  return out;
}

void restore_values(ModelGraph& graph, const std::map<std::string, std::vector<double>>& values) {
  for (const auto& [address, v] : values) {
    auto data = graph.at(address).tensor.mutable_data();
    if (data.size() != v.size()) throw DimensionError("restore: size mismatch for " + address);
    std::copy(v.begin(), v.end(), data.begin());
  }
}

namespace {

ad::Tensor stack_targets(std::span<const Example> all, std::span<const std::size_t> idx) {
  const std::size_t labels = all[idx[0]].targets.size();
  std::vector<double> t;
  t.reserve(idx.size() * labels);
  for (auto i : idx) {
    if (all[i].targets.size() != labels) throw InputError("examples disagree on label count");
    t.insert(t.end(), all[i].targets.begin(), all[i].targets.end());
  }
  return ad::Tensor::from({idx.size(), labels}, std::move(t));
}

std::optional<double> macro_auroc(const std::vector<double>& logits, std::span<const Example> examples) {
  const std::size_t n = examples.size();
  const std::size_t labels = examples[0].targets.size();
  std::vector<std::optional<double>> per;
  for (std::size_t l = 0; l < labels; ++l) {
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = logits[i * labels + l];
      y[i] = examples[i].targets[l] != 0.0;
    }
    per.push_back(metrics::auroc_label(s, y));
  }
  return metrics::macro_average(per);
}

// Per-run view of the inputs: cached encodings when encoders are frozen.
class Batcher {
 public:
  Batcher(const Model& model, std::span<const Example> examples) : model_(model), examples_(examples) {
    if (!model.encoders_trainable()) {
      ad::NoGradGuard guard;
      cache_.reserve(examples.size());
      for (const auto& e : examples) cache_.push_back(model.encode(e.input));
    }
  }

  ad::Tensor logits(std::span<const std::size_t> idx, bool training, std::span<Rng> streams) const {
    if (!cache_.empty()) {
      std::vector<EncodedSample> batch;
      batch.reserve(idx.size());
      for (auto i : idx) batch.push_back(cache_[i]);
      return model_.head(batch, training, streams);
    }
    std::vector<ModelInput> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(examples_[i].input);
    return model_.forward(batch, training, streams);
  }

 private:
  const Model& model_;
  std::span<const Example> examples_;
  std::vector<EncodedSample> cache_;
};

std::vector<double> batched_logits(const Batcher& b, std::size_t n, std::size_t batch) {
  ad::NoGradGuard guard;
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    idx.resize(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto l = b.logits(idx, false, {});
    out.insert(out.end(), l.data().begin(), l.data().end());
  }
  return out;
}

}  // namespace

std::vector<double> predict_logits(const Model& model, std::span<const Example> examples) {
  if (examples.empty()) return {};
  return batched_logits(Batcher(model, examples), examples.size(), 64);
}

TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  AdamW optimizer(AdamWOptions{.weight_decay = cfg.weight_decay});
  return train(model, train_set, val_set, cfg, optimizer, hooks);
}

TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> val_set,
                  const TrainConfig& cfg, AdamW& optimizer, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw InputError("training split is empty");
  if (val_set.empty() && !hooks.validator) throw InputError("validation split is empty");

  const std::size_t n = train_set.size();
  const std::size_t labels = train_set[0].targets.size();
  std::vector<double> pos_weight;
  if (cfg.pos_weight) {
    pos_weight.assign(labels, 1.0);
    for (std::size_t l = 0; l < labels; ++l) {
      double pos = 0;
      for (const auto& e : train_set) pos += e.targets[l];
      if (pos > 0 && pos < static_cast<double>(n)) pos_weight[l] = (static_cast<double>(n) - pos) / pos;
    }
  }

  const Batcher train_batches(model, train_set);
  std::optional<Batcher> val_batches;
  if (!hooks.validator) val_batches.emplace(model, val_set);

  const std::size_t micro_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t steps_per_epoch = (micro_per_epoch + cfg.accumulation - 1) / cfg.accumulation;
  const std::size_t total_steps = steps_per_epoch * cfg.max_epochs;
  const auto warmup_steps =
      std::min(static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps))),
               total_steps - 1);

  ModelGraph& graph = model.graph();
  std::vector<std::span<double>> grads;
  const Rng root(cfg.seed);
  const Rng shuffle_root = root.split("shuffle");
  const Rng dropout_root = root.split("dropout");

  TrainResult result;
  EarlyStopping stopper(cfg.patience);
  auto best = snapshot_trainable(graph);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler = shuffle_root.split(epoch);
    shuffler.shuffle(std::span(order));
    const Rng epoch_dropout = dropout_root.split(epoch);

    double loss_sum = 0;
    double last_lr = 0;
    for (std::size_t group_start = 0; group_start < n; group_start += cfg.batch * cfg.accumulation) {
      const std::size_t group_end = std::min(n, group_start + cfg.batch * cfg.accumulation);
      const double group_size = static_cast<double>(group_end - group_start);
      graph.zero_grad();
      for (std::size_t mb = group_start; mb < group_end; mb += cfg.batch) {
        const std::size_t mb_end = std::min(group_end, mb + cfg.batch);
        std::span<const std::size_t> idx(order.data() + mb, mb_end - mb);
        std::vector<Rng> streams;
        streams.reserve(idx.size());
        for (auto i : idx) streams.push_back(epoch_dropout.split(i));
        const auto logits = train_batches.logits(idx, true, streams);
        const auto loss = bce_loss(logits, stack_targets(train_set, idx), pos_weight);
        const double weight = static_cast<double>(idx.size()) / group_size;
        loss_sum += loss.item() * static_cast<double>(idx.size());
        ad::backward(ad::scale(loss, weight));
      }
      grads.clear();
      for (auto& p : graph.parameters()) {
        if (p.trainable()) grads.push_back(p.tensor.mutable_grad());
      }
      clip_gradients(grads, cfg.clip_norm);
      last_lr = lr_schedule(step, total_steps, warmup_steps, cfg.lr);
      optimizer.step(graph, last_lr);
      ++step;
    }
    graph.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.lr = last_lr;
    if (hooks.validator) {
      rec.val_auroc = hooks.validator(epoch);
    } else {
      rec.val_auroc = macro_auroc(batched_logits(*val_batches, val_set.size(), 64), val_set);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (stopper.update(rec.val_auroc)) best = snapshot_trainable(graph);
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  restore_values(graph, best);
  result.best_epoch = stopper.best_epoch();
  result.best_val_auroc = stopper.best();
  result.optimizer_steps = optimizer.steps();
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "epoch,train_loss,val_auroc,lr,seconds\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%s,%.10g,%.3f\n", r.epoch, r.train_loss,
                  r.val_auroc ? std::to_string(*r.val_auroc).c_str() : "", r.lr, r.seconds);
    out << buf;
  }
}

namespace {

constexpr char kMagic[8] = {'P', 'E', 'T', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelGraph& graph, const AdamW& optimizer,
                     const nlohmann::json& meta) {
  std::vector<double> payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : graph.parameters()) {
    if (!p.trainable()) continue;
    tensors.push_back({{"address", p.address}, {"shape", p.tensor.shape()}, {"offset", payload.size()}});
    payload.insert(payload.end(), p.tensor.data().begin(), p.tensor.data().end());
  }
  nlohmann::json moments = nlohmann::json::array();
  for (const auto& [address, m] : optimizer.moments()) {
    moments.push_back({{"address", address}, {"size", m.m.size()}, {"offset", payload.size()}});
    payload.insert(payload.end(), m.m.begin(), m.m.end());
    payload.insert(payload.end(), m.v.begin(), m.v.end());
  }
  const nlohmann::json header = {{"meta", meta},
                                 {"tensors", tensors},
                                 {"optimizer", {{"steps", optimizer.steps()}, {"moments", moments}}},
                                 {"payload_doubles", payload.size()}};
  const std::string h = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const std::uint64_t len = h.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw InputError("not a checkpoint: " + path.string());
  if (version != kCheckpointVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(h);
  std::vector<double> payload(header.at("payload_doubles").get<std::size_t>());
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!in) throw InputError("truncated checkpoint " + path.string());

  Checkpoint ck;
  ck.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    std::size_t size = 1;
    for (auto d : t.at("shape")) size *= d.get<std::size_t>();
    const auto off = t.at("offset").get<std::size_t>();
    ck.tensors.emplace(t.at("address").get<std::string>(),
                       std::vector<double>(payload.begin() + off, payload.begin() + off + size));
  }
  ck.optimizer_steps = header.at("optimizer").at("steps").get<std::uint64_t>();
  for (const auto& m : header.at("optimizer").at("moments")) {
    const auto off = m.at("offset").get<std::size_t>();
    const auto size = m.at("size").get<std::size_t>();
    AdamW::Moments mm;
    mm.m.assign(payload.begin() + off, payload.begin() + off + size);
    mm.v.assign(payload.begin() + off + size, payload.begin() + off + 2 * size);
    ck.moments.emplace(m.at("address").get<std::string>(), std::move(mm));
  }
  return ck;
}

}  // namespace petfuse
