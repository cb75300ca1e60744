// SPDX-License-Identifier: Apache-2.0
#include "petfuse/fusion.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "petfuse/error.hpp"

namespace petfuse {

void FusionConfig::validate() const {
  if (vision_in == 0 || text_in == 0 || shared_dim == 0 || head_hidden == 0 || num_labels == 0) {
    throw ConfigError("fusion dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("fusion dropout must be in [0, 1)");
}

std::uint64_t FusionConfig::parameter_count() const {
  const std::uint64_t d = shared_dim, h = head_hidden;
  return vision_in * d + text_in * d + 3 * d * d + d * h + h * num_labels;
}

void build_fusion(ModelGraph& graph, const FusionConfig& cfg, Rng rng) {
  cfg.validate();
  const std::size_t d = cfg.shared_dim;
  register_linear(graph, "fusion.vision_proj", kVisionProjection, cfg.vision_in, d, false,
                  rng.split("vision_proj"), true);
  for (const char* p : {"q", "k", "v"}) {
    register_linear(graph, std::string("fusion.attn.") + p, kCrossModalAttention, d, d, false,
                    rng.split(std::string("attn.") + p), true);
  }
  register_linear(graph, "fusion.text_proj", kTextProjection, cfg.text_in, d, false,
                  rng.split("text_proj"), true);
  register_linear(graph, "fusion.head.fc1", kClassificationHead, d, cfg.head_hidden, false,
                  rng.split("head.fc1"), true);
  register_linear(graph, "fusion.head.fc2", kClassificationHead, cfg.head_hidden, cfg.num_labels, false,
                  rng.split("head.fc2"), true);
}

namespace {

void check_batch(const ad::Tensor& x, std::size_t width, const char* what) {
  if (x.cols() != width) {
    throw DimensionError(std::string(what) + " features have length " + std::to_string(x.cols()) +
                         ", expected " + std::to_string(width));
  }
}

ad::Tensor maybe_dropout(const ad::Tensor& rows, double p, bool training, std::span<Rng> streams) {
  if (!training || p == 0.0) return rows;
  if (streams.size() != rows.rows()) throw InputError("one dropout stream per sample is required");
  std::vector<ad::Tensor> out;
  out.reserve(rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    out.push_back(ad::dropout(ad::row(rows, i), p, true, streams[i]));
  }
  return ad::stack_rows(out);
}

}  // namespace

ad::Tensor fuse_forward(const ModelGraph& graph, const FusionConfig& cfg, const ad::Tensor& vision,
                        const ad::Tensor& text, bool training, std::span<Rng> dropout_streams) {
  check_batch(vision, cfg.vision_in, "vision");
  check_batch(text, cfg.text_in, "text");
  if (vision.rows() != text.rows()) throw DimensionError("vision/text batch sizes differ");

  const auto pv = linear(graph, vision, "fusion.vision_proj");
  const auto pt = linear(graph, text, "fusion.text_proj");
  const auto q = linear(graph, pv, "fusion.attn.q");
  const auto k = linear(graph, pt, "fusion.attn.k");
  const auto v = linear(graph, pt, "fusion.attn.v");
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.shared_dim));

  const std::size_t batch = vision.rows();
  std::vector<ad::Tensor> fused;
  fused.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    // One query attends over this sample's text key/value only.
    auto attended = ad::softmax_attention(ad::row(q, i), ad::row(k, i), ad::row(v, i), attn_scale);
    fused.push_back(ad::layer_norm(ad::add(ad::row(pv, i), attended)));
  }
  auto h = maybe_dropout(ad::stack_rows(fused), cfg.dropout, training, dropout_streams);
  h = ad::relu(linear(graph, h, "fusion.head.fc1"));
  return linear(graph, h, "fusion.head.fc2");
}

void build_vision_head(ModelGraph& graph, const VisionHeadConfig& cfg, Rng rng) {
  if (cfg.vision_in == 0 || cfg.hidden == 0 || cfg.num_labels == 0) {
    throw ConfigError("vision head dimensions must be positive");
  }
  register_linear(graph, "vision_head.fc1", kClassificationHead, cfg.vision_in, cfg.hidden, false,
                  rng.split("fc1"), true);
  register_linear(graph, "vision_head.fc2", kClassificationHead, cfg.hidden, cfg.num_labels, false,
                  rng.split("fc2"), true);
}

ad::Tensor vision_head_forward(const ModelGraph& graph, const VisionHeadConfig& cfg,
                               const ad::Tensor& vision, bool training, std::span<Rng> dropout_streams) {
  check_batch(vision, cfg.vision_in, "vision");
  auto x = maybe_dropout(vision, cfg.dropout, training, dropout_streams);
  x = ad::relu(linear(graph, x, "vision_head.fc1"));
  return linear(graph, x, "vision_head.fc2");
}

}  // namespace petfuse
