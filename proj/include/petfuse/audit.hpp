// SPDX-License-Identifier: Apache-2.0
//
// Residual-leakage audit: how well can a text-only classifier recover the
// labels from raw versus redacted reports?
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/data.hpp"

namespace petfuse {

struct AuditConfig {
  double lr = 0.05;
  double weight_decay = 1e-2;
  std::size_t steps = 300;
  std::uint64_t seed = 0;
};

/// Per-label logistic regression over token counts, fitted full-batch with
/// AdamW on the training documents and scored on the test documents.
struct TextProbe {
  std::vector<std::string> vocabulary;
  std::vector<double> weights;  // [vocabulary x labels]
  std::vector<double> bias;     // [labels]
  std::optional<double> test_auroc;
  std::vector<std::optional<double>> per_label_auroc;
};

TextProbe fit_text_probe(const std::vector<std::string>& docs, const std::vector<std::vector<int>>& labels,
                         const SplitIndices& split, const AuditConfig& cfg);

struct AuditResult {
  std::optional<double> auroc_raw;
  std::optional<double> auroc_redacted;
  /// auroc_raw - auroc_redacted; nullopt when either side is undefined.
  std::optional<double> delta;
  std::size_t raw_vocabulary = 0;
  std::size_t redacted_vocabulary = 0;

  nlohmann::json to_json() const;
};

/// Both corpora must align 1:1 with `labels`; `split` must be patient-disjoint.
AuditResult audit_leakage(const std::vector<std::string>& raw, const std::vector<std::string>& redacted,
                          const std::vector<std::vector<int>>& labels, const SplitIndices& split,
                          const AuditConfig& cfg = {});

}  // namespace petfuse
