// SPDX-License-Identifier: Apache-2.0
//
// Application configuration: one JSON tree with a documented default for
// every field. Files and `--set` overrides are merged strictly over the
// defaults; a key the defaults do not have is an error.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/audit.hpp"
#include "petfuse/data.hpp"
#include "petfuse/model.hpp"
#include "petfuse/pet.hpp"
#include "petfuse/training.hpp"

namespace petfuse {

struct AppConfig {
  /// Drives every random stream: splits, head init, dropout, LoRA/adapter init.
  std::uint64_t seed = 0;
  ModelConfig model;
  PetConfig pet;
  TrainConfig train;
  SplitSpec split;
  AuditConfig audit;
  std::size_t ece_bins = 15;

  /// Propagates `seed` into the nested configs that carry their own copy.
  void sync_seeds();
  void validate() const;
};

nlohmann::json to_json(const AppConfig& cfg);
AppConfig app_config_from_json(const nlohmann::json& j);

/// Merges `patch` into `base` in place. Every key in `patch` must exist in
/// `base` with a compatible type; `where` prefixes error messages.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

/// Applies one "a.b.c=value" override. The value is parsed as JSON when it
/// parses, and taken as a string otherwise.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// defaults <- file (if non-empty) <- overrides, then validated.
AppConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// Writes the effective configuration as pretty JSON to `dir/config.json`.
void echo_config(const AppConfig& cfg, const std::filesystem::path& dir);

}  // namespace petfuse
