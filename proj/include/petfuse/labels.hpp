// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace petfuse {

inline constexpr std::size_t kNumLabels = 14;

/// Finding names in file-contract order.
inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "Atelectasis",   "Cardiomegaly", "Effusion", "Infiltration",  "Mass",
    "Nodule",        "Pneumonia",    "Pneumothorax", "Consolidation", "Edema",
    "Emphysema",     "Fibrosis",     "Pleural Thickening", "Hernia"};

/// Overall prevalence of each finding in the reference corpus (3,851 studies).
inline constexpr std::array<double, kNumLabels> kReferencePrevalence = {
    0.125, 0.109, 0.231, 0.069, 0.033, 0.057, 0.087,
    0.017, 0.014, 0.073, 0.043, 0.029, 0.034, 0.008};

}  // namespace petfuse
