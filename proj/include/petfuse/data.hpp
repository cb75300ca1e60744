// SPDX-License-Identifier: Apache-2.0
//
// Dataset records, JSONL manifests, patient-level splits and the synthetic
// planted-signal generator.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petfuse/labels.hpp"
#include "petfuse/rng.hpp"

namespace petfuse {

struct Sample {
  std::string id;
  std::string patient_id;
  std::string text;
  std::vector<int> labels;              // kNumLabels entries in {0, 1}
  std::vector<double> vision_features;  // empty when the manifest has none
  std::optional<nlohmann::json> substitutions;  // written by the redact command

  /// Throws InputError on a broken invariant.
  void validate() const;
};

/// One JSON object per line:
///   {"id", "patient_id", "text", "labels": [14 x 0/1], "vision_features": [2048 reals]?,
///    "substitutions": {...}?}
/// Schema violations raise ParseError carrying the 1-based line number.
std::vector<Sample> load_manifest(const std::filesystem::path& path);
std::vector<Sample> parse_manifest(std::istream& in);
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);
void write_manifest(std::ostream& out, const std::vector<Sample>& samples);
nlohmann::json to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Patients per split from fractions by largest remainder; leftover patients
/// go to the larger remainders, ties in split order (train, val, test). Every
/// split with a positive fraction receives at least one patient.
std::array<std::size_t, 3> allocate_patients(std::size_t patients, const SplitSpec& spec);

/// Partitions sample indices by patient. Which patients land in which split
/// is decided by a seeded shuffle of the distinct patient ids.
SplitIndices split_patients(const std::vector<Sample>& samples, const SplitSpec& spec);

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

/// Where a label's planted signal lives.
enum class Channel { none, vision, text, both };
std::string to_string(Channel c);
Channel channel_from_string(const std::string& s);

struct SignalPlan {
  std::array<Channel, kNumLabels> channels{};

  static SignalPlan uniform(Channel c);
  bool in_vision(std::size_t label) const;
  bool in_text(std::size_t label) const;
};

struct GeneratorConfig {
  std::size_t patients = 500;
  std::array<double, kNumLabels> prevalence = kReferencePrevalence;
  SignalPlan plan = SignalPlan::uniform(Channel::both);
  /// Chance that a positive text-assigned finding is named in each report section.
  double leak_prob = 0.9;
  /// Chance that a positive text-assigned finding contributes a descriptive cue
  /// phrase outside the lexicon; such cues survive redaction.
  double cue_prob = 0.0;
  /// Mean shift of vision features along a label's direction, in noise units.
  double vision_signal = 2.0;
  std::size_t max_studies_per_patient = 2;
  bool vision_features = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic in the config. Each report has FINDINGS and IMPRESSION
/// sections with a fixed number of finding slots, so the count of pathology
/// phrases does not depend on the labels; unused slots hold incidental
/// findings. Location and measurement phrases are drawn independently of the
/// labels.
std::vector<Sample> generate_synthetic(const GeneratorConfig& cfg);

}  // namespace petfuse
