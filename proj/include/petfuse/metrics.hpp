// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace petfuse::metrics {

/// Mann-Whitney AUROC: fraction of (positive, negative) pairs ranked
/// correctly, ties credited one half. nullopt unless both classes occur.
std::optional<double> auroc_label(std::span<const double> scores, std::span<const int> labels);

/// Average precision, sum over descending distinct thresholds of
/// (R_n - R_{n-1}) * P_n. nullopt without positives.
std::optional<double> auprc_label(std::span<const double> scores, std::span<const int> labels);

/// Unweighted mean of the defined entries; nullopt if none is defined.
std::optional<double> macro_average(std::span<const std::optional<double>> values);
std::optional<double> macro_average(std::span<const double> values, std::span<const bool> valid);

/// Row-major [samples x labels] probabilities with aligned binary labels.
struct PredictionSet {
  std::size_t num_samples = 0;
  std::size_t num_labels = 0;
  std::vector<double> probabilities;
  std::vector<int> labels;
  std::vector<std::string> label_names;

  void validate() const;
  std::vector<double> column_scores(std::size_t label) const;
  std::vector<int> column_labels(std::size_t label) const;
};

struct CalibrationBin {
  double lower = 0, upper = 0;
  double confidence = 0;  // mean confidence of the bin's pairs
  double accuracy = 0;
  std::size_t count = 0;
};

struct CalibrationReport {
  double ece = 0;
  std::size_t num_bins = 0;
  std::size_t pairs = 0;
  std::vector<CalibrationBin> bins;
};

/// Pooled multi-label ECE. Every (sample, label) pair contributes one
/// prediction with confidence max(p, 1-p), correct iff (p >= 0.5) == y;
/// equal-width bins on [0.5, 1].
CalibrationReport ece(const PredictionSet& predictions, std::size_t bins = 15);

double sigmoid(double z);

/// Temperature T > 0 minimizing mean BCE of sigmoid(z / T) against labels.
double fit_temperature(std::span<const double> logits, std::span<const int> labels);
std::vector<double> apply_temperature(std::span<const double> logits, double temperature);
/// Mean binary cross-entropy of sigmoid(z / T).
double temperature_nll(std::span<const double> logits, std::span<const int> labels, double temperature);

struct LabelResult {
  std::string name;
  std::optional<double> auroc;
  std::optional<double> auprc;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  std::optional<double> auroc_macro;
  std::optional<double> auprc_macro;
  CalibrationReport calibration;
  std::vector<LabelResult> per_label;
  std::vector<std::string> excluded_labels;  // lacking both classes
  std::uint64_t trainable_params = 0;
  std::uint64_t total_params = 0;
  double efficiency_pct = 0;

  nlohmann::json to_json() const;
};

/// Per-label and macro discrimination plus pooled calibration. Labels without
/// both classes are excluded from the AUROC macro average and listed.
EvalReport evaluate(const PredictionSet& predictions, std::size_t ece_bins = 15);

}  // namespace petfuse::metrics
