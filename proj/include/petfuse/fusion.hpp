// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "petfuse/model_graph.hpp"
#include "petfuse/rng.hpp"
#include "petfuse/tensor.hpp"

namespace petfuse {

/// Cross-modal fusion pathway. All linear maps are bias-free and the layer
/// norm has no affine terms, so the parameter count is a sum of plain
/// weight-matrix products.
struct FusionConfig {
  std::size_t vision_in = 2048;
  std::size_t text_in = 768;
  std::size_t shared_dim = 512;
  std::size_t head_hidden = 256;
  std::size_t num_labels = 14;
  double dropout = 0.1;

  void validate() const;
  /// vision_in*d + text_in*d + 3*d*d + d*h + h*L
  std::uint64_t parameter_count() const;
};

/// Component names used for the fusion parameters in budget reports.
inline constexpr const char* kVisionProjection = "Vision Projection Layer";
inline constexpr const char* kCrossModalAttention = "Cross-modal Attention";
inline constexpr const char* kTextProjection = "Text Projection Layer";
inline constexpr const char* kClassificationHead = "Classification Head";

/// Registers the trainable fusion tensors under "fusion.".
void build_fusion(ModelGraph& graph, const FusionConfig& cfg, Rng rng);

/// vision [B x vision_in], text [B x text_in] -> logits [B x L].
///
/// Per sample: project both modalities to d; the projected vision vector is
/// the single query and the projected text the key/value; add the query back,
/// layer-normalize, apply dropout when training, then Linear-ReLU-Linear.
/// `dropout_streams` supplies one stream per row when training.
ad::Tensor fuse_forward(const ModelGraph& graph, const FusionConfig& cfg, const ad::Tensor& vision,
                        const ad::Tensor& text, bool training, std::span<Rng> dropout_streams);

/// Trainable head on vision features alone: Linear(in, hidden)-ReLU-Linear(hidden, L).
struct VisionHeadConfig {
  std::size_t vision_in = 2048;
  std::size_t hidden = 512;
  std::size_t num_labels = 14;
  double dropout = 0.1;

  std::uint64_t parameter_count() const { return vision_in * hidden + hidden * num_labels; }
};

void build_vision_head(ModelGraph& graph, const VisionHeadConfig& cfg, Rng rng);

ad::Tensor vision_head_forward(const ModelGraph& graph, const VisionHeadConfig& cfg,
                               const ad::Tensor& vision, bool training, std::span<Rng> dropout_streams);

}  // namespace petfuse
