// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "petfuse/tensor.hpp"

namespace petfuse {

enum class ParamRole { weight, bias, embedding, lora_a, lora_b, adapter_weight, adapter_bias };

struct Parameter {
  std::string address;    // e.g. "text.block0.attn.q.weight"
  std::string component;  // reporting group, e.g. "Text Encoder"
  ParamRole role;
  ad::Tensor tensor;

  bool trainable() const { return tensor.requires_grad(); }
};

enum class HookKind { attention_projection, bias, adapter_slot };

/// Structural attachment point exposed by an encoder.
struct Hook {
  std::string address;
  HookKind kind;
  std::string encoder;  // "vision" or "text"
  std::size_t block;
  /// Parameter address the hook resolves to; empty for adapter slots.
  std::string tensor_address;
};

struct LoraInjection {
  ad::Tensor a;  // [in x r]
  ad::Tensor b;  // [r x out], zero at init
  double scaling;
};

struct AdapterInjection {
  ad::Tensor down_w;  // [width x bottleneck]
  ad::Tensor down_b;
  ad::Tensor up_w;    // [bottleneck x width], zero at init
  ad::Tensor up_b;
};

/// Hierarchically addressed parameters plus hook registry and PET injections.
/// Addresses are unique; iteration order is registration order.
class ModelGraph {
 public:
  ad::Tensor add(std::string address, std::string component, ParamRole role, ad::Tensor tensor,
                 bool trainable);

  bool contains(const std::string& address) const { return index_.count(address) != 0; }
  Parameter& at(const std::string& address);
  const Parameter& at(const std::string& address) const;
  const ad::Tensor& tensor(const std::string& address) const { return at(address).tensor; }

  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void set_trainable(const std::string& address, bool on) { at(address).tensor.set_requires_grad(on); }
  void zero_grad();

  void add_hook(Hook hook);
  std::span<const Hook> hooks() const { return hooks_; }

  void inject_lora(const std::string& projection, LoraInjection injection);
  const LoraInjection* lora(const std::string& projection) const;
  void inject_adapter(const std::string& slot, AdapterInjection injection);
  const AdapterInjection* adapter(const std::string& slot) const;
  /// Drops adapter modules (their parameters stay registered but unused).
  void clear_adapters() { adapters_.clear(); }
  bool has_injections() const { return !lora_.empty() || !adapters_.empty(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Hook> hooks_;
  std::map<std::string, LoraInjection> lora_;
  std::map<std::string, AdapterInjection> adapters_;
};

/// x W (+ b) with any LoRA delta registered for `projection`.
/// Parameters are looked up as "<projection>.weight" / "<projection>.bias".
ad::Tensor linear(const ModelGraph& graph, const ad::Tensor& x, const std::string& projection);

/// Weights uniform in +-1/sqrt(fan_in); bias (optional) likewise.
void register_linear(ModelGraph& graph, const std::string& projection, const std::string& component,
                     std::size_t in, std::size_t out, bool with_bias, Rng rng, bool trainable);

}  // namespace petfuse
