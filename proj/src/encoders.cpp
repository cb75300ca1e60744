// SPDX-License-Identifier: Apache-2.0
#include "petfuse/encoders.hpp"

#include <cmath>

#include "petfuse/error.hpp"

namespace petfuse {

namespace {

constexpr const char* kProjections[] = {"q", "k", "v", "out"};

std::string block_prefix(const std::string& name, std::size_t b) {
  return name + ".block" + std::to_string(b);
}

void validate(const EncoderSpec& spec) {
  if (spec.output_dim == 0) throw ConfigError("encoder output_dim must be positive");
  if (spec.kind == EncoderKind::precomputed) return;
  if (spec.depth == 0 || spec.width < 2 || spec.mlp_ratio == 0) {
    throw ConfigError("mini encoder needs depth >= 1 and width >= 2");
  }
  if (spec.kind == EncoderKind::mini_vision &&
      (spec.patches == 0 || spec.input_dim % spec.patches != 0)) {
    throw ConfigError("mini-vision input_dim must be divisible by patches");
  }
  if (spec.kind == EncoderKind::mini_text && (spec.vocab_size == 0 || spec.max_len == 0)) {
    throw ConfigError("mini-text encoder needs a vocabulary and max_len");
  }
}

}  // namespace

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::mini_vision: return "mini-vision";
    case EncoderKind::mini_text: return "mini-text";
    case EncoderKind::precomputed: return "precomputed";
  }
  return "?";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "mini-vision") return EncoderKind::mini_vision;
  if (s == "mini-text") return EncoderKind::mini_text;
  if (s == "precomputed") return EncoderKind::precomputed;
  throw ConfigError("unknown encoder kind: " + s);
}

EncoderSpec EncoderSpec::vision(EncoderKind kind) {
  EncoderSpec s;
  s.kind = kind;
  s.output_dim = kVisionFeatureDim;
  return s;
}

EncoderSpec EncoderSpec::text(EncoderKind kind, std::size_t vocab_size) {
  EncoderSpec s;
  s.kind = kind;
  s.output_dim = kTextFeatureDim;
  s.vocab_size = vocab_size;
  return s;
}

std::vector<Hook> list_hooks(const std::string& name, const EncoderSpec& spec) {
  std::vector<Hook> hooks;
  if (spec.kind == EncoderKind::precomputed) return hooks;
  for (std::size_t b = 0; b < spec.depth; ++b) {
    const std::string pre = block_prefix(name, b);
    for (const char* p : kProjections) {
      const std::string addr = pre + ".attn." + p;
      hooks.push_back({addr, HookKind::attention_projection, name, b, addr + ".weight"});
    }
    for (const char* p : kProjections) {
      const std::string addr = pre + ".attn." + p + ".bias";
      hooks.push_back({addr, HookKind::bias, name, b, addr});
    }
    for (const char* p : {"fc1", "fc2"}) {
      const std::string addr = pre + ".mlp." + p + ".bias";
      hooks.push_back({addr, HookKind::bias, name, b, addr});
    }
    hooks.push_back({pre + ".adapter", HookKind::adapter_slot, name, b, ""});
  }
  // Encoder-level biases sit outside the blocks and are tagged with block == depth.
  if (spec.kind == EncoderKind::mini_vision) {
    hooks.push_back({name + ".patch.bias", HookKind::bias, name, spec.depth, name + ".patch.bias"});
  }
  hooks.push_back({name + ".head.up.bias", HookKind::bias, name, spec.depth, name + ".head.up.bias"});
  return hooks;
}

Encoder::Encoder(std::string name, EncoderSpec spec) : name_(std::move(name)), spec_(spec) {
  validate(spec_);
}

std::string Encoder::component() const {
  return name_ == "vision" ? "Vision Encoder" : name_ == "text" ? "Text Encoder" : name_ + " encoder";
}

void Encoder::build(ModelGraph& graph, Rng rng) const {
  if (spec_.kind == EncoderKind::precomputed) return;
  const std::size_t w = spec_.width;
  const std::string comp = component();
  auto normal_table = [&](const std::string& addr, std::size_t rows, double sd) {
    Rng r = rng.split(addr);
    std::vector<double> v(rows * w);
    for (auto& x : v) x = sd * r.normal();
    graph.add(addr, comp, ParamRole::embedding, ad::Tensor::from({rows, w}, std::move(v)), false);
  };

  if (spec_.kind == EncoderKind::mini_text) {
    normal_table(name_ + ".embed.token", spec_.vocab_size, 1.0);
    normal_table(name_ + ".embed.position", spec_.max_len, 0.1);
  } else {
    register_linear(graph, name_ + ".patch", comp, spec_.input_dim / spec_.patches, w, true,
                    rng.split(name_ + ".patch"), false);
    normal_table(name_ + ".embed.position", spec_.patches, 0.1);
  }
  for (std::size_t b = 0; b < spec_.depth; ++b) {
    const std::string pre = block_prefix(name_, b);
    for (const char* p : kProjections) {
      const std::string addr = pre + ".attn." + p;
      register_linear(graph, addr, comp, w, w, true, rng.split(addr), false);
    }
    const std::size_t hidden = w * spec_.mlp_ratio;
    register_linear(graph, pre + ".mlp.fc1", comp, w, hidden, true, rng.split(pre + ".mlp.fc1"), false);
    register_linear(graph, pre + ".mlp.fc2", comp, hidden, w, true, rng.split(pre + ".mlp.fc2"), false);
  }
  register_linear(graph, name_ + ".head.up", comp, w, spec_.output_dim, true,
                  rng.split(name_ + ".head.up"), false);
  for (auto& h : list_hooks(name_, spec_)) graph.add_hook(std::move(h));
}

ad::Tensor Encoder::run_blocks(const ModelGraph& graph, ad::Tensor x) const {
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(spec_.width));
  for (std::size_t b = 0; b < spec_.depth; ++b) {
    const std::string pre = block_prefix(name_, b);
    auto q = linear(graph, x, pre + ".attn.q");
    auto k = linear(graph, x, pre + ".attn.k");
    auto v = linear(graph, x, pre + ".attn.v");
    auto attn = linear(graph, ad::softmax_attention(q, k, v, attn_scale), pre + ".attn.out");
    x = ad::layer_norm(ad::add(x, attn));
    auto mlp = linear(graph, ad::relu(linear(graph, x, pre + ".mlp.fc1")), pre + ".mlp.fc2");
    x = ad::layer_norm(ad::add(x, mlp));
    if (const auto* a = graph.adapter(pre + ".adapter")) {
      auto h = ad::relu(ad::add_bias(ad::matmul(x, a->down_w), a->down_b));
      x = ad::add(x, ad::add_bias(ad::matmul(h, a->up_w), a->up_b));
    }
  }
  return x;
}

ad::Tensor Encoder::encode(const ModelGraph& graph, std::span<const double> input) const {
  if (spec_.kind == EncoderKind::mini_text) throw InputError(name_ + " encoder expects token ids");
  if (input.size() != spec_.input_length()) {
    throw InputError(name_ + " feature length " + std::to_string(input.size()) + ", expected " +
                     std::to_string(spec_.input_length()));
  }
  std::vector<double> values(input.begin(), input.end());
  if (spec_.kind == EncoderKind::precomputed) return ad::Tensor::row_vector(std::move(values));

  const std::size_t patch_dim = spec_.input_dim / spec_.patches;
  auto patches = ad::Tensor::from({spec_.patches, patch_dim}, std::move(values));
  auto x = ad::add(linear(graph, patches, name_ + ".patch"), graph.tensor(name_ + ".embed.position"));
  x = run_blocks(graph, x);
  return linear(graph, ad::mean_rows(x), name_ + ".head.up");
}

ad::Tensor Encoder::encode_tokens(const ModelGraph& graph, std::span<const std::size_t> ids) const {
  if (spec_.kind != EncoderKind::mini_text) throw InputError(name_ + " encoder does not take tokens");
  if (ids.empty()) throw InputError("token sequence must start with [CLS]");
  if (ids.size() > spec_.max_len) throw InputError("token sequence longer than max_len");
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  auto x = ad::add(ad::gather_rows(graph.tensor(name_ + ".embed.token"), ids),
                   ad::gather_rows(graph.tensor(name_ + ".embed.position"), positions));
  x = run_blocks(graph, ad::layer_norm(x));
  return linear(graph, ad::row(x, 0), name_ + ".head.up");
}

}  // namespace petfuse
