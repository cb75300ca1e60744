// SPDX-License-Identifier: Apache-2.0
//
// Optimization: AdamW, warmup-cosine schedule, global-norm clipping,
// micro-batch accumulation and early stopping on validation macro AUROC.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/model.hpp"
#include "petfuse/rng.hpp"
#include "petfuse/tensor.hpp"

namespace petfuse {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  std::size_t batch = 16;
  std::size_t accumulation = 2;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  double clip_norm = 1.0;
  double warmup_fraction = 0.1;
  /// Weight positives by negatives/positives per label (from the training split).
  bool pos_weight = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean binary cross-entropy over samples and labels, computed on logits.
ad::Tensor bce_loss(const ad::Tensor& logits, const ad::Tensor& targets, std::span<const double> pos_weight = {});

/// Linear warmup to `peak` over `warmup_steps`, then cosine decay to zero at
/// `total_steps`.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak);

/// Scales the gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_gradients(std::span<const std::span<double>> grads, double max_norm);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// AdamW with decoupled weight decay, applied before the moment update.
/// Moments are kept per parameter address for trainable tensors only.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// One update of every trainable parameter from its accumulated gradient.
  void step(ModelGraph& graph, double lr);

  std::uint64_t steps() const { return steps_; }
  const AdamWOptions& options() const { return options_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::uint64_t steps, std::map<std::string, Moments> moments);

 private:
  AdamWOptions options_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Tracks the best validation score; an epoch improves only if it is strictly
/// better. An undefined score never improves on an existing best.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch (1-based numbering). Returns true when it is the new best.
  bool update(std::optional<double> score);
  bool should_stop() const { return since_improvement_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::optional<double> best() const { return best_; }
  std::size_t since_improvement() const { return since_improvement_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_improvement_ = 0;
  std::optional<double> best_;
};

struct Example {
  ModelInput input;
  std::vector<double> targets;  // one 0/1 entry per label
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  std::optional<double> val_auroc;
  double lr = 0;  // learning rate of the epoch's last optimizer step
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_auroc;
  std::uint64_t optimizer_steps = 0;
  bool stopped_early = false;
};

struct TrainHooks {
  /// Replaces the validation pass (given the 1-based epoch) when set.
  std::function<std::optional<double>(std::size_t)> validator;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains the model's trainable tensors and restores the best-validation
/// parameters before returning. The optimizer is exposed for checkpointing.
TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> val_set,
                  const TrainConfig& cfg, AdamW& optimizer, const TrainHooks& hooks = {});
TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Eval-mode logits, row-major [examples x labels].
std::vector<double> predict_logits(const Model& model, std::span<const Example> examples);

/// Values of every trainable tensor, keyed by address.
std::map<std::string, std::vector<double>> snapshot_trainable(const ModelGraph& graph);
void restore_values(ModelGraph& graph, const std::map<std::string, std::vector<double>>& values);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

/// Binary checkpoint: 8-byte magic, u32 version, u64 header length, a JSON
/// header, then little-endian doubles for every tensor and moment listed in
/// the header. `meta` is stored verbatim (configs, vocabulary, RNG state).
void save_checkpoint(const std::filesystem::path& path, const ModelGraph& graph, const AdamW& optimizer,
                     const nlohmann::json& meta);

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, std::vector<double>> tensors;
  std::uint64_t optimizer_steps = 0;
  std::map<std::string, AdamW::Moments> moments;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace petfuse
