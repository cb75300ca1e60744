// SPDX-License-Identifier: Apache-2.0
//
// Frozen feature providers. The miniature encoders are small post-norm
// transformers whose blocks expose every hook class the PET policies use:
// q/k/v/out attention projections, biases, and a residual adapter slot after
// each block. Precomputed encoders pass externally extracted features through.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "petfuse/model_graph.hpp"
#include "petfuse/rng.hpp"
#include "petfuse/tensor.hpp"

namespace petfuse {

inline constexpr std::size_t kVisionFeatureDim = 2048;
inline constexpr std::size_t kTextFeatureDim = 768;

enum class EncoderKind { mini_vision, mini_text, precomputed };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::precomputed;
  std::size_t output_dim = kVisionFeatureDim;
  std::size_t depth = 2;
  std::size_t width = 128;
  std::size_t mlp_ratio = 2;
  /// mini-vision: raw input length and the number of patches it is cut into.
  std::size_t input_dim = kVisionFeatureDim;
  std::size_t patches = 16;
  /// mini-text: vocabulary size and maximum sequence length (positions).
  std::size_t vocab_size = 0;
  std::size_t max_len = 512;

  static EncoderSpec vision(EncoderKind kind);
  static EncoderSpec text(EncoderKind kind, std::size_t vocab_size);
  std::size_t input_length() const { return kind == EncoderKind::mini_vision ? input_dim : output_dim; }
};

/// Hooks an encoder named `name` ("vision" or "text") exposes, in stable order:
/// per block the four attention projections, its biases, then its adapter
/// slot; encoder-level biases last. Precomputed encoders have none.
std::vector<Hook> list_hooks(const std::string& name, const EncoderSpec& spec);

class Encoder {
 public:
  Encoder(std::string name, EncoderSpec spec);

  const std::string& name() const { return name_; }
  const EncoderSpec& spec() const { return spec_; }
  std::string component() const;

  /// Registers frozen parameters and hooks. Deterministic in `rng`.
  void build(ModelGraph& graph, Rng rng) const;

  /// Real-valued input: precomputed features or a mini-vision input vector.
  /// Returns [1 x output_dim].
  ad::Tensor encode(const ModelGraph& graph, std::span<const double> input) const;
  /// Token ids beginning with [CLS]. Returns the projected [CLS] state, [1 x output_dim].
  ad::Tensor encode_tokens(const ModelGraph& graph, std::span<const std::size_t> ids) const;

 private:
  ad::Tensor run_blocks(const ModelGraph& graph, ad::Tensor x) const;

  std::string name_;
  EncoderSpec spec_;
};

}  // namespace petfuse
