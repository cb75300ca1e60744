// SPDX-License-Identifier: Apache-2.0
#include "petfuse/pet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "petfuse/error.hpp"

namespace petfuse {

std::string to_string(PetPolicy p) {
  switch (p) {
    case PetPolicy::frozen: return "frozen";
    case PetPolicy::lora: return "lora";
    case PetPolicy::bitfit: return "bitfit";
    case PetPolicy::adapter: return "adapter";
    case PetPolicy::full: return "full";
  }
  return "?";
}

PetPolicy pet_policy_from_string(const std::string& s) {
  if (s == "frozen") return PetPolicy::frozen;
  if (s == "lora") return PetPolicy::lora;
  if (s == "bitfit") return PetPolicy::bitfit;
  if (s == "adapter") return PetPolicy::adapter;
  if (s == "full") return PetPolicy::full;
  throw ConfigError("unknown PET policy: " + s);
}

namespace {

bool is_head_parameter(const std::string& address) {
  return address.rfind("fusion.", 0) == 0 || address.rfind("vision_head.", 0) == 0;
}

bool layer_selected(const Hook& hook, const PetConfig& cfg, std::size_t depth) {
  if (cfg.layers.empty() || hook.block >= depth) return true;
  return std::find(cfg.layers.begin(), cfg.layers.end(), hook.block) != cfg.layers.end();
}

std::string injected_component(const char* kind, const std::string& encoder) {
  return std::string(kind) + " (" + encoder + ")";
}

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

void apply_policy(Model& model, const PetConfig& cfg, Rng rng) {
  ModelGraph& graph = model.graph();
  const bool full = cfg.policy == PetPolicy::full;
  for (auto& p : graph.parameters()) p.tensor.set_requires_grad(full || is_head_parameter(p.address));
  if (cfg.policy == PetPolicy::frozen || full) return;

  std::vector<const Encoder*> encoders{&model.vision_encoder()};
  if (model.text_encoder()) encoders.push_back(&*model.text_encoder());
  for (const Encoder* e : encoders) {
    if (e->spec().kind == EncoderKind::precomputed) {
      throw PolicyError(to_string(cfg.policy) + " policy needs hook points, but the " + e->name() +
                        " encoder is precomputed");
    }
    for (auto layer : cfg.layers) {
      if (layer >= e->spec().depth) throw PolicyError("PET layer index out of range: " + std::to_string(layer));
    }
  }
  if (cfg.policy == PetPolicy::lora && cfg.lora.rank == 0) throw ConfigError("LoRA rank must be >= 1");
  if (cfg.policy == PetPolicy::adapter && cfg.adapter.bottleneck == 0) {
    throw ConfigError("adapter bottleneck must be >= 1");
  }

  const std::vector<Hook> hooks(graph.hooks().begin(), graph.hooks().end());
  for (const Encoder* e : encoders) {
    const std::size_t depth = e->spec().depth;
    const std::size_t width = e->spec().width;
    for (const Hook& h : hooks) {
      if (h.encoder != e->name() || !layer_selected(h, cfg, depth)) continue;
      if (cfg.policy == PetPolicy::bitfit && h.kind == HookKind::bias) {
        graph.set_trainable(h.tensor_address, true);
      } else if (cfg.policy == PetPolicy::lora && h.kind == HookKind::attention_projection) {
        const std::string proj = h.address.substr(h.address.rfind('.') + 1);
        if (std::find(cfg.lora.targets.begin(), cfg.lora.targets.end(), proj) == cfg.lora.targets.end()) {
          continue;
        }
        const std::size_t in = graph.tensor(h.tensor_address).rows();
        const std::size_t out = graph.tensor(h.tensor_address).cols();
        const std::size_t r = cfg.lora.rank;
        const double bound = 1.0 / std::sqrt(static_cast<double>(r));
        const std::string comp = injected_component("LoRA", e->name());
        auto a = graph.add(h.address + ".lora_a", comp, ParamRole::lora_a,
                           uniform_tensor({in, r}, bound, rng.split(h.address)), true);
        auto b = graph.add(h.address + ".lora_b", comp, ParamRole::lora_b,
                           ad::Tensor::zeros({r, out}), true);
        graph.inject_lora(h.address, LoraInjection{a, b, cfg.lora.scaling()});
      } else if (cfg.policy == PetPolicy::adapter && h.kind == HookKind::adapter_slot) {
        const std::size_t k = cfg.adapter.bottleneck;
        const double bound = 1.0 / std::sqrt(static_cast<double>(width));
        const std::string comp = injected_component("Adapter", e->name());
        AdapterInjection inj;
        inj.down_w = graph.add(h.address + ".down.weight", comp, ParamRole::adapter_weight,
                               uniform_tensor({width, k}, bound, rng.split(h.address)), true);
        inj.down_b = graph.add(h.address + ".down.bias", comp, ParamRole::adapter_bias,
                               ad::Tensor::zeros({k}), true);
        inj.up_w = graph.add(h.address + ".up.weight", comp, ParamRole::adapter_weight,
                             ad::Tensor::zeros({k, width}), true);
        inj.up_b = graph.add(h.address + ".up.bias", comp, ParamRole::adapter_bias,
                             ad::Tensor::zeros({width}), true);
        graph.inject_adapter(h.address, std::move(inj));
      }
    }
  }
}

double BudgetReport::efficiency_pct() const {
  const std::uint64_t denom = declared_total ? declared_total : total;
  if (denom == 0) return 0.0;
  return 100.0 * static_cast<double>(trainable) / static_cast<double>(denom);
}

nlohmann::json BudgetReport::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components) {
    comps.push_back({{"component", c.component}, {"trainable", c.trainable}, {"total", c.total}});
  }
  nlohmann::json j = {{"components", comps}, {"trainable", trainable}, {"total", total}};
  if (declared_total) j["declared_total"] = declared_total;
  char pct[32];
  std::snprintf(pct, sizeof pct, "%.2f", efficiency_pct());
  j["efficiency_pct"] = pct;
  return j;
}

BudgetReport count_params(const ModelGraph& graph, std::uint64_t declared_total) {
  BudgetReport r;
  r.declared_total = declared_total;
  std::map<std::string, std::size_t> slot;
  for (const auto& p : graph.parameters()) {
    auto [it, fresh] = slot.emplace(p.component, r.components.size());
    if (fresh) r.components.push_back({p.component, 0, 0});
    auto& c = r.components[it->second];
    const std::uint64_t n = p.tensor.size();
    c.total += n;
    r.total += n;
    if (p.trainable()) {
      c.trainable += n;
      r.trainable += n;
    }
  }
  return r;
}

BudgetCheck enforce_budget(const BudgetReport& report, std::uint64_t target, double tolerance) {
  if (target == 0) throw ConfigError("budget target must be positive");
  BudgetCheck check;
  check.relative_diff =
      (static_cast<double>(report.trainable) - static_cast<double>(target)) / static_cast<double>(target);
  check.pass = std::abs(check.relative_diff) <= tolerance;
  for (const auto& c : report.components) {
    if (c.trainable > 0) check.largest.push_back(c);
  }
  std::stable_sort(check.largest.begin(), check.largest.end(),
                   [](const auto& a, const auto& b) { return a.trainable > b.trainable; });
  char buf[160];
  std::snprintf(buf, sizeof buf, "trainable %llu vs target %llu (%+.2f%%, tolerance %.2f%%)",
                static_cast<unsigned long long>(report.trainable), static_cast<unsigned long long>(target),
                100.0 * check.relative_diff, 100.0 * tolerance);
  check.message = buf;
  if (!check.pass) {
    for (std::size_t i = 0; i < std::min<std::size_t>(3, check.largest.size()); ++i) {
      check.message += "; " + check.largest[i].component + "=" + std::to_string(check.largest[i].trainable);
    }
  }
  return check;
}

}  // namespace petfuse
