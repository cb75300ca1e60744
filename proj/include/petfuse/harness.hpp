// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: arm construction, budget matching, single runs, and
// multi-arm plans with their CSV/JSON artifacts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/config.hpp"
#include "petfuse/data.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/model.hpp"
#include "petfuse/training.hpp"

namespace petfuse {

enum class ArmKind { vision_only, budget_matched, full_pet, full_finetune };

std::string to_string(ArmKind k);
ArmKind arm_kind_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Budget search

struct BudgetCandidate {
  std::size_t shared_dim = 0;
  std::size_t head_hidden = 0;
  std::uint64_t params = 0;
};

struct BudgetSearch {
  BudgetCandidate best;
  double relative_diff = 0;  // (params - target) / target
  std::vector<BudgetCandidate> nearest;  // closest first, at most five
};

/// Head width paired with shared width d during the search: round(d/2), at least 14.
std::size_t budget_head_hidden(std::size_t shared_dim);

/// Exhaustive search over d in [1, max_dim] for the fusion configuration
/// whose trainable count is closest to `target` (ties to the smaller d).
/// Throws SearchError, naming the nearest candidates, when the best one is
/// outside `tolerance`.
BudgetSearch search_fusion_budget(std::uint64_t target, const FusionConfig& base, double tolerance = 0.01,
                                  std::size_t max_dim = 512);

/// Returns `base` reshaped into the given arm:
///  vision_only    - precomputed vision features into the 2048-512-14 head
///  budget_matched - fusion sized by search_fusion_budget to the vision-only head count
///  full_pet       - fusion at the configured size with the configured PET policy
///  full_finetune  - mini encoders on both sides, every tensor trainable
AppConfig build_arm(ArmKind kind, const AppConfig& base, std::optional<std::uint64_t> budget_target = {});

// ---------------------------------------------------------------------------
// Single runs

struct SplitSamples {
  std::vector<Sample> train, val, test;
};

SplitSamples split_samples(const std::vector<Sample>& samples, const SplitSpec& spec);

/// Builds the model (vocabulary from the training texts) and applies the PET policy.
std::unique_ptr<Model> make_model(const AppConfig& cfg, const std::vector<Sample>& train_samples);
std::unique_ptr<Model> make_model(const AppConfig& cfg, Vocabulary vocabulary);

std::vector<Example> make_examples(const Model& model, const std::vector<Sample>& samples);

metrics::PredictionSet to_prediction_set(std::span<const double> logits, const std::vector<Sample>& samples,
                                         double temperature = 1.0);

struct RunOutcome {
  metrics::EvalReport report;
  TrainResult training;
  BudgetReport budget;
};

/// Trains on the train split (early stopping on val) and evaluates on test.
/// When `out_dir` is non-empty, writes config.json, history.csv, report.json
/// and model.ckpt there.
RunOutcome run_single(const AppConfig& cfg, const std::vector<Sample>& samples, const std::string& method,
                      const std::filesystem::path& out_dir = {});

// ---------------------------------------------------------------------------
// Plans

struct ArmSpec {
  std::string name;
  ArmKind kind = ArmKind::full_pet;
  nlohmann::json overrides = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> budget_target;
};

struct ExperimentPlan {
  nlohmann::json base = nlohmann::json::object();  // config patch shared by every arm
  std::vector<ArmSpec> arms;
  std::string data;    // manifest path, may be overridden by the caller
  std::string output;  // output directory, may be overridden by the caller

  /// Unique, file-safe arm names and non-empty seed lists.
  void validate() const;
};

ExperimentPlan plan_from_json(const nlohmann::json& j);
ExperimentPlan load_plan(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentPlan& plan);

/// One row of the summary CSV.
struct SummaryRow {
  std::string method;
  std::uint64_t seed = 0;
  std::optional<double> auroc_macro;
  std::optional<double> auprc_macro;
  double ece = 0;
  std::uint64_t trainable_params = 0;
  std::uint64_t total_params = 0;
  double efficiency_pct = 0;
};

SummaryRow summary_row(const metrics::EvalReport& report);
std::string summary_csv_header();
std::string format_summary_row(const SummaryRow& row);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

struct ArmFailure {
  std::string arm;
  std::uint64_t seed = 0;
  std::string error;
};

struct AttributionResult {
  std::vector<SummaryRow> rows;
  std::vector<ArmFailure> failures;
  /// Mean macro AUROC per arm name over its successful seeds.
  std::vector<std::pair<std::string, double>> arm_means;
  /// budget_matched - vision_only
  std::optional<double> fusion_effect;
  /// full_pet - budget_matched
  std::optional<double> scaling_effect;
  /// full_pet - vision_only
  std::optional<double> multimodal_gain;

  nlohmann::json to_json() const;
};

/// Derives the arm means and deltas from summary rows; `plan` maps arm
/// names to kinds. The first arm of each kind is the one compared.
AttributionResult attribute(const ExperimentPlan& plan, std::vector<SummaryRow> rows,
                            std::vector<ArmFailure> failures = {});

/// Trains every arm x seed, isolating failures per arm, and writes:
///   plan.json, <arm>.csv, <arm>/seed<k>/..., summary.csv, per_label.csv,
///   attribution.json, efficiency.csv
/// Deltas are computed from the summary CSV as read back from disk.
AttributionResult run_plan(const ExperimentPlan& plan, const std::vector<Sample>& samples,
                           const std::filesystem::path& out_dir, std::size_t jobs = 1);

struct EfficiencyRow {
  std::string method;
  double auroc = 0;
  std::uint64_t trainable_params = 0;
  /// AUROC per million trainable parameters, from the parameter count in
  /// millions rounded to two decimals; undefined for zero-parameter arms.
  std::optional<long long> auroc_per_million;
  std::optional<double> efficiency_ratio;  // relative to the reference row
  std::size_t rank = 0;                    // by AUROC, 1 = best
};

/// One row per arm (means over seeds, in first-appearance order). The
/// reference row for the ratio is `reference` if given, else the first row.
std::vector<EfficiencyRow> efficiency_table(const std::vector<SummaryRow>& rows,
                                            const std::string& reference = "");
std::string format_efficiency_csv(const std::vector<EfficiencyRow>& rows);
std::optional<long long> auroc_per_million(double auroc, std::uint64_t trainable_params);

/// Rebuilds summary tables from a plan output directory (no model access):
/// returns the text of the efficiency table and attribution as Markdown.
std::string regenerate_report(const std::filesystem::path& results_dir);

}  // namespace petfuse
