// SPDX-License-Identifier: Apache-2.0
#include "petfuse/model.hpp"

#include <cmath>

#include "petfuse/error.hpp"

namespace petfuse {

std::string to_string(Architecture a) { return a == Architecture::fusion ? "fusion" : "vision-only"; }

Architecture architecture_from_string(const std::string& s) {
  if (s == "fusion") return Architecture::fusion;
  if (s == "vision-only") return Architecture::vision_only;
  throw ConfigError("unknown architecture: " + s);
}

namespace {

EncoderSpec with_vocab(EncoderSpec spec, const Vocabulary& vocab) {
  if (spec.kind == EncoderKind::mini_text) spec.vocab_size = vocab.size();
  return spec;
}

}  // namespace

Model::Model(ModelConfig cfg, Vocabulary vocabulary, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocabulary)), vision_("vision", cfg_.vision) {
  if (cfg_.vision.output_dim != cfg_.fusion.vision_in || cfg_.vision.output_dim != cfg_.vision_head.vision_in) {
    throw ConfigError("vision encoder output must match the head input width");
  }
  Rng encoder_rng = Rng(cfg_.encoder_seed).split("encoders");
  Rng head_rng = Rng(seed).split("trainable");
  vision_.build(graph_, encoder_rng.split("vision"));
  if (cfg_.architecture == Architecture::fusion) {
    cfg_.text = with_vocab(cfg_.text, vocab_);
    if (cfg_.text.kind == EncoderKind::mini_vision) throw ConfigError("text encoder cannot be mini-vision");
    if (cfg_.text.output_dim != cfg_.fusion.text_in) {
      throw ConfigError("text encoder output must match fusion text_in");
    }
    text_.emplace("text", cfg_.text);
    text_->build(graph_, encoder_rng.split("text"));
    build_fusion(graph_, cfg_.fusion, head_rng.split("fusion"));
  } else {
    build_vision_head(graph_, cfg_.vision_head, head_rng.split("vision_head"));
  }
}

ModelInput Model::prepare(std::span<const double> vision, const std::string& text) const {
  ModelInput in;
  in.vision.assign(vision.begin(), vision.end());
  if (text_ && text_->spec().kind == EncoderKind::mini_text) {
    in.tokens = vocab_.encode(text, text_->spec().max_len);
  }
  return in;
}

FeatureNorm FeatureNorm::fit(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw InputError("cannot fit a feature norm on zero rows");
  const std::size_t d = rows[0].size();
  FeatureNorm n;
  n.mean.assign(d, 0.0);
  n.scale.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("feature rows differ in length");
    for (std::size_t j = 0; j < d; ++j) n.mean[j] += r[j];
  }
  const double count = static_cast<double>(rows.size());
  for (auto& m : n.mean) m /= count;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) n.scale[j] += (r[j] - n.mean[j]) * (r[j] - n.mean[j]);
  }
  for (auto& s : n.scale) {
    const double sd = std::sqrt(s / count);
    s = sd < 1e-12 ? 1.0 : 1.0 / sd;
  }
  return n;
}

nlohmann::json FeatureNorm::to_json() const { return {{"mean", mean}, {"scale", scale}}; }

FeatureNorm FeatureNorm::from_json(const nlohmann::json& j) {
  FeatureNorm n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.scale = j.at("scale").get<std::vector<double>>();
  if (n.mean.size() != n.scale.size()) throw InputError("feature norm mean/scale lengths differ");
  return n;
}

namespace {

ad::Tensor apply_norm(const FeatureNorm& n, const ad::Tensor& x) {
  if (n.empty() || !x.defined()) return x;
  if (x.cols() != n.mean.size()) throw DimensionError("feature norm width does not match the encoder output");
  const std::size_t d = n.mean.size();
  std::vector<double> neg(d);
  for (std::size_t j = 0; j < d; ++j) neg[j] = -n.mean[j];
  return ad::mul(ad::add_bias(x, ad::Tensor::from({d}, std::move(neg))), ad::Tensor::from({1, d}, n.scale));
}

}  // namespace

void Model::set_feature_norms(FeatureNorm vision, FeatureNorm text) {
  vision_norm_ = std::move(vision);
  text_norm_ = text_ ? std::move(text) : FeatureNorm{};
}

void Model::fit_feature_norms(std::span<const ModelInput> inputs) {
  ad::NoGradGuard no_grad;
  std::vector<std::vector<double>> vis, txt;
  for (const auto& in : inputs) {
    const auto e = encode_raw(in);
    vis.emplace_back(e.vision.data().begin(), e.vision.data().end());
    if (text_) txt.emplace_back(e.text.data().begin(), e.text.data().end());
  }
  set_feature_norms(FeatureNorm::fit(vis), text_ ? FeatureNorm::fit(txt) : FeatureNorm{});
}

EncodedSample Model::encode(const ModelInput& input) const {
  auto out = encode_raw(input);
  out.vision = apply_norm(vision_norm_, out.vision);
  if (text_) out.text = apply_norm(text_norm_, out.text);
  return out;
}

EncodedSample Model::encode_raw(const ModelInput& input) const {
  EncodedSample out;
  out.vision = vision_.encode(graph_, input.vision);
  if (text_) {
    out.text = text_->spec().kind == EncoderKind::mini_text ? text_->encode_tokens(graph_, input.tokens)
                                                            : text_->encode(graph_, input.text_features);
  }
  return out;
}

bool Model::encoders_trainable() const {
  if (graph_.has_injections()) return true;
  for (const auto& p : graph_.parameters()) {
    const bool encoder_side = p.address.rfind("vision.", 0) == 0 || p.address.rfind("text.", 0) == 0;
    if (encoder_side && p.trainable()) return true;
  }
  return false;
}

ad::Tensor Model::head(std::span<const EncodedSample> batch, bool training, std::span<Rng> dropout_streams) const {
  if (batch.empty()) throw InputError("empty batch");
  std::vector<ad::Tensor> vis;
  vis.reserve(batch.size());
  for (const auto& s : batch) vis.push_back(s.vision);
  const auto v = ad::stack_rows(vis);
  if (cfg_.architecture == Architecture::vision_only) {
    return vision_head_forward(graph_, cfg_.vision_head, v, training, dropout_streams);
  }
  std::vector<ad::Tensor> txt;
  txt.reserve(batch.size());
  for (const auto& s : batch) txt.push_back(s.text);
  return fuse_forward(graph_, cfg_.fusion, v, ad::stack_rows(txt), training, dropout_streams);
}

ad::Tensor Model::forward(std::span<const ModelInput> batch, bool training, std::span<Rng> dropout_streams) const {
  std::vector<EncodedSample> enc;
  enc.reserve(batch.size());
  for (const auto& in : batch) enc.push_back(encode(in));
  return head(enc, training, dropout_streams);
}

}  // namespace petfuse
