// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/encoders.hpp"
#include "petfuse/fusion.hpp"
#include "petfuse/model_graph.hpp"
#include "petfuse/tokenizer.hpp"

namespace petfuse {

enum class Architecture { fusion, vision_only };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct ModelConfig {
  Architecture architecture = Architecture::fusion;
  EncoderSpec vision = EncoderSpec::vision(EncoderKind::precomputed);
  EncoderSpec text = EncoderSpec::text(EncoderKind::mini_text, 0);
  FusionConfig fusion;
  VisionHeadConfig vision_head;
  /// Seeds the frozen encoder weights, independent of the training seed so
  /// every arm and seed sees the same "pretrained" encoders.
  std::uint64_t encoder_seed = 1729;
  /// Parameter total the efficiency ratio is quoted against; 0 means the
  /// model's own total.
  std::uint64_t declared_total_params = 94'300'000;
  /// Standardize each encoder's output with statistics fitted on the
  /// training split before training starts (see FeatureNorm).
  bool normalize_features = true;
};

/// Fixed affine map (x - mean) * scale on an encoder output. Not a
/// parameter: it is fitted once and never trained. Randomly initialised
/// mini-encoders produce outputs whose variation across inputs is tiny
/// compared with their common offset; standardizing restores a usable scale.
struct FeatureNorm {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const { return mean.empty(); }
  /// Per-dimension mean and 1/std over `rows` (each of equal length);
  /// dimensions with std below 1e-12 get scale 1.
  static FeatureNorm fit(std::span<const std::vector<double>> rows);
  nlohmann::json to_json() const;
  static FeatureNorm from_json(const nlohmann::json& j);
};

struct ModelInput {
  std::vector<double> vision;
  std::vector<std::size_t> tokens;
  std::vector<double> text_features;  // precomputed text encoders only
};

struct EncodedSample {
  ad::Tensor vision;  // [1 x 2048]
  ad::Tensor text;    // [1 x 768]; undefined for vision-only models
};

class Model {
 public:
  /// `vocabulary` is only used when the text encoder is a mini-text encoder.
  Model(ModelConfig cfg, Vocabulary vocabulary, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ModelGraph& graph() { return graph_; }
  const ModelGraph& graph() const { return graph_; }
  const Encoder& vision_encoder() const { return vision_; }
  const std::optional<Encoder>& text_encoder() const { return text_; }

  ModelInput prepare(std::span<const double> vision, const std::string& text) const;

  /// Encoder outputs after the feature norms (when set).
  EncodedSample encode(const ModelInput& input) const;
  /// Fits both feature norms from the current encoders on `inputs`.
  void fit_feature_norms(std::span<const ModelInput> inputs);
  void set_feature_norms(FeatureNorm vision, FeatureNorm text);
  const FeatureNorm& vision_norm() const { return vision_norm_; }
  const FeatureNorm& text_norm() const { return text_norm_; }
  /// True when gradients can reach encoder-side tensors, i.e. encoder outputs
  /// are not constants and cannot be cached.
  bool encoders_trainable() const;

  /// Logits [B x L] from already-encoded samples.
  ad::Tensor head(std::span<const EncodedSample> batch, bool training, std::span<Rng> dropout_streams) const;
  ad::Tensor forward(std::span<const ModelInput> batch, bool training, std::span<Rng> dropout_streams) const;

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ModelGraph graph_;
  Encoder vision_;
  std::optional<Encoder> text_;
  FeatureNorm vision_norm_;
  FeatureNorm text_norm_;

  EncodedSample encode_raw(const ModelInput& input) const;
};

}  // namespace petfuse
