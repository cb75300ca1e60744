// SPDX-License-Identifier: Apache-2.0
#include "petfuse/model_graph.hpp"

#include <cmath>

#include "petfuse/error.hpp"

namespace petfuse {

ad::Tensor ModelGraph::add(std::string address, std::string component, ParamRole role,
                           ad::Tensor tensor, bool trainable) {
  if (contains(address)) throw Error("duplicate parameter address: " + address);
  tensor.set_requires_grad(trainable);
  index_.emplace(address, params_.size());
  params_.push_back(Parameter{std::move(address), std::move(component), role, tensor});
  return tensor;
}

Parameter& ModelGraph::at(const std::string& address) {
  auto it = index_.find(address);
  if (it == index_.end()) throw Error("unknown parameter address: " + address);
  return params_[it->second];
}

const Parameter& ModelGraph::at(const std::string& address) const {
  auto it = index_.find(address);
  if (it == index_.end()) throw Error("unknown parameter address: " + address);
  return params_[it->second];
}

void ModelGraph::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ModelGraph::add_hook(Hook hook) {
  for (const auto& h : hooks_) {
    if (h.address == hook.address) throw Error("duplicate hook address: " + hook.address);
  }
  hooks_.push_back(std::move(hook));
}

void ModelGraph::inject_lora(const std::string& projection, LoraInjection injection) {
  lora_[projection] = std::move(injection);
}

const LoraInjection* ModelGraph::lora(const std::string& projection) const {
  auto it = lora_.find(projection);
  return it == lora_.end() ? nullptr : &it->second;
}

void ModelGraph::inject_adapter(const std::string& slot, AdapterInjection injection) {
  adapters_[slot] = std::move(injection);
}

const AdapterInjection* ModelGraph::adapter(const std::string& slot) const {
  auto it = adapters_.find(slot);
  return it == adapters_.end() ? nullptr : &it->second;
}

ad::Tensor linear(const ModelGraph& graph, const ad::Tensor& x, const std::string& projection) {
  ad::Tensor y = ad::matmul(x, graph.tensor(projection + ".weight"));
  if (const auto* l = graph.lora(projection)) {
    y = ad::add(y, ad::scale(ad::matmul(ad::matmul(x, l->a), l->b), l->scaling));
  }
  const std::string bias = projection + ".bias";
  if (graph.contains(bias)) y = ad::add_bias(y, graph.tensor(bias));
  return y;
}

void register_linear(ModelGraph& graph, const std::string& projection, const std::string& component,
                     std::size_t in, std::size_t out, bool with_bias, Rng rng, bool trainable) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Rng wr = rng.split("weight");
  std::vector<double> w(in * out);
  for (auto& v : w) v = wr.uniform(-bound, bound);
  graph.add(projection + ".weight", component, ParamRole::weight, ad::Tensor::from({in, out}, std::move(w)),
            trainable);
  if (with_bias) {
    Rng br = rng.split("bias");
    std::vector<double> b(out);
    for (auto& v : b) v = br.uniform(-bound, bound);
    graph.add(projection + ".bias", component, ParamRole::bias, ad::Tensor::from({out}, std::move(b)),
              trainable);
  }
}

}  // namespace petfuse
