// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/model.hpp"

namespace petfuse {

enum class PetPolicy { frozen, lora, bitfit, adapter, full };

std::string to_string(PetPolicy p);
PetPolicy pet_policy_from_string(const std::string& s);

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 32.0;
  /// Which attention projections receive a low-rank delta.
  std::vector<std::string> targets = {"q", "k", "v", "out"};

  double scaling() const { return alpha / static_cast<double>(rank); }
};

struct AdapterConfig {
  std::size_t bottleneck = 64;
};

struct PetConfig {
  PetPolicy policy = PetPolicy::frozen;
  LoraConfig lora;
  AdapterConfig adapter;
  /// Encoder blocks PET acts on; empty means every block.
  std::vector<std::size_t> layers;
};

/// Marks trainable tensors and injects LoRA factors or adapters.
///
///  frozen  - only the head/fusion pathway is trainable
///  lora    - W + (alpha/r) A B on targeted encoder attention projections,
///            A uniform in +-1/sqrt(r), B zero; base weights frozen
///  bitfit  - encoder bias tensors become trainable
///  adapter - x + up(relu(down(x))) after each encoder block, up zero-init
///  full    - every tensor trainable
///
/// The head/fusion pathway stays trainable under every policy. Encoder-side
/// policies apply to all encoders of the model; a precomputed (hookless)
/// encoder makes them fail with PolicyError.
void apply_policy(Model& model, const PetConfig& cfg, Rng rng);

struct ComponentCount {
  std::string component;
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
};

struct BudgetReport {
  std::vector<ComponentCount> components;  // first-registration order
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  std::uint64_t declared_total = 0;  // 0 when not declared

  /// trainable / (declared_total or total), in percent; 0 for an empty graph.
  double efficiency_pct() const;
  nlohmann::json to_json() const;
};

BudgetReport count_params(const ModelGraph& graph, std::uint64_t declared_total = 0);

struct BudgetCheck {
  bool pass = false;
  double relative_diff = 0.0;  // (trainable - target) / target
  std::vector<ComponentCount> largest;  // trainable components, largest first
  std::string message;
};

BudgetCheck enforce_budget(const BudgetReport& report, std::uint64_t target, double tolerance);

}  // namespace petfuse
