// SPDX-License-Identifier: Apache-2.0
#include "petfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "petfuse/error.hpp"

namespace petfuse {

void Sample::validate() const {
  if (id.empty()) throw InputError("sample id is empty");
  if (patient_id.empty()) throw InputError("sample " + id + " has an empty patient_id");
  if (labels.size() != kNumLabels) {
    throw InputError("sample " + id + " has " + std::to_string(labels.size()) + " labels, expected " +
                     std::to_string(kNumLabels));
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("sample " + id + " has a non-binary label");
  }
  for (double v : vision_features) {
    if (!std::isfinite(v)) throw InputError("sample " + id + " has a non-finite vision feature");
  }
}

nlohmann::json to_json(const Sample& s) {
  nlohmann::json j = {{"id", s.id}, {"patient_id", s.patient_id}, {"text", s.text}, {"labels", s.labels}};
  if (!s.vision_features.empty()) j["vision_features"] = s.vision_features;
  if (s.substitutions) j["substitutions"] = *s.substitutions;
  return j;
}

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw InputError(std::string("missing field \"") + name + "\"");
  return *it;
}

std::string string_field(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw InputError(std::string("field \"") + name + "\" must be a string");
  return v.get<std::string>();
}

}  // namespace

Sample sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("record is not a JSON object");
  static const std::set<std::string> known = {"id", "patient_id", "text", "labels", "vision_features",
                                              "substitutions"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InputError("unknown field \"" + key + "\"");
  }
  Sample s;
  s.id = string_field(j, "id");
  s.patient_id = string_field(j, "patient_id");
  s.text = string_field(j, "text");
  const auto& labels = field(j, "labels");
  if (!labels.is_array()) throw InputError("field \"labels\" must be an array");
  for (const auto& y : labels) {
    if (!y.is_number_integer()) throw InputError("labels must be integers 0 or 1");
    s.labels.push_back(y.get<int>());
  }
  if (auto it = j.find("vision_features"); it != j.end()) {
    if (!it->is_array()) throw InputError("field \"vision_features\" must be an array");
    s.vision_features.reserve(it->size());
    for (const auto& v : *it) {
      if (!v.is_number()) throw InputError("vision_features must be numeric");
      s.vision_features.push_back(v.get<double>());
    }
  }
  if (auto it = j.find("substitutions"); it != j.end()) s.substitutions = *it;
  s.validate();
  return s;
}

std::vector<Sample> parse_manifest(std::istream& in) {
  std::vector<Sample> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto s = sample_from_json(nlohmann::json::parse(line));
      if (!ids.insert(s.id).second) throw InputError("duplicate sample id " + s.id);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const InputError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::vector<Sample> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(std::ostream& out, const std::vector<Sample>& samples) {
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest " + path.string());
  write_manifest(out, samples);
}

void SplitSpec::validate() const {
  for (double f : {train, val, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

std::array<std::size_t, 3> allocate_patients(std::size_t patients, const SplitSpec& spec) {
  spec.validate();
  const std::array<double, 3> frac = {spec.train, spec.val, spec.test};
  std::size_t nonzero = 0;
  for (double f : frac) nonzero += f > 0.0;
  if (patients < nonzero) {
    throw InputError("need at least " + std::to_string(nonzero) + " patients to split, got " +
                     std::to_string(patients));
  }
  std::array<std::size_t, 3> count{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = frac[i] * static_cast<double>(patients);
    count[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainder[i] = quota - static_cast<double>(count[i]);
    assigned += count[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b] + 1e-12; });
  for (std::size_t k = 0; assigned < patients; k = (k + 1) % 3) {
    ++count[order[k]];
    ++assigned;
  }
  // A split with a positive fraction must not be empty; borrow from the largest.
  for (std::size_t i = 0; i < 3; ++i) {
    if (frac[i] > 0.0 && count[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
      --count[donor];
      ++count[i];
    }
  }
  return count;
}

SplitIndices split_patients(const std::vector<Sample>& samples, const SplitSpec& spec) {
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].patient_id.empty()) throw InputError("sample " + samples[i].id + " has no patient_id");
    by_patient[samples[i].patient_id].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> patients;
  for (const auto& [_, idx] : by_patient) patients.push_back(&idx);
  const auto count = allocate_patients(patients.size(), spec);
  Rng rng = Rng(spec.seed).split("split");
  rng.shuffle(std::span(patients));

  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> dest = {&out.train, &out.val, &out.test};
  std::size_t p = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < count[s]; ++k, ++p) {
      dest[s]->insert(dest[s]->end(), patients[p]->begin(), patients[p]->end());
    }
    std::sort(dest[s]->begin(), dest[s]->end());
  }
  return out;
}

std::string to_string(Channel c) {
  switch (c) {
    case Channel::none: return "none";
    case Channel::vision: return "vision";
    case Channel::text: return "text";
    case Channel::both: return "both";
  }
  return "none";
}

Channel channel_from_string(const std::string& s) {
  if (s == "none") return Channel::none;
  if (s == "vision") return Channel::vision;
  if (s == "text") return Channel::text;
  if (s == "both") return Channel::both;
  throw ConfigError("unknown signal channel: " + s);
}

SignalPlan SignalPlan::uniform(Channel c) {
  SignalPlan p;
  p.channels.fill(c);
  return p;
}

bool SignalPlan::in_vision(std::size_t label) const {
  return channels[label] == Channel::vision || channels[label] == Channel::both;
}

bool SignalPlan::in_text(std::size_t label) const {
  return channels[label] == Channel::text || channels[label] == Channel::both;
}

void GeneratorConfig::validate() const {
  if (patients == 0) throw ConfigError("generator needs at least one patient");
  for (double p : prevalence) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("prevalence must lie strictly between 0 and 1");
  }
  for (double p : {leak_prob, cue_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("leak and cue probabilities must lie in [0, 1]");
  }
  if (max_studies_per_patient == 0) throw ConfigError("max_studies_per_patient must be >= 1");
  if (!std::isfinite(vision_signal)) throw ConfigError("vision_signal must be finite");
}

namespace {

constexpr std::size_t kSlotsPerSection = 3;
constexpr std::size_t kFeatureDim = 2048;

// How each finding is written when a report names it.
const std::array<std::vector<std::string>, kNumLabels>& finding_terms() {
  static const std::array<std::vector<std::string>, kNumLabels> kTerms = {{
      {"atelectasis", "subsegmental atelectasis"},
      {"cardiomegaly", "enlarged heart", "cardiac enlargement"},
      {"effusion", "pleural effusion"},
      {"infiltrate", "infiltration"},
      {"mass"},
      {"nodule", "pulmonary nodule"},
      {"pneumonia"},
      {"pneumothorax"},
      {"consolidation"},
      {"edema", "pulmonary edema"},
      {"emphysema", "hyperinflation"},
      {"fibrosis", "interstitial fibrosis"},
      {"pleural thickening"},
      {"hernia", "hiatal hernia"},
  }};
  return kTerms;
}

// Descriptions that avoid lexicon terms, so they survive redaction.
const std::array<std::string, kNumLabels>& cue_sentences() {
  static const std::array<std::string, kNumLabels> kCues = {
      "Linear bandlike densities with volume loss.",
      "The cardiac silhouette is prominent.",
      "Blunting of the costophrenic angle.",
      "Patchy interstitial markings.",
      "A large rounded density.",
      "A small rounded density.",
      "Findings may reflect infection.",
      "A visceral pleural line is visible.",
      "Air bronchograms are present.",
      "Kerley lines and cephalization.",
      "Flattened diaphragms with increased lucency.",
      "Reticular coarse markings.",
      "Irregular pleural contour.",
      "Retrocardiac air-fluid level.",
  };
  return kCues;
}

const std::vector<std::string>& incidental_terms() {
  static const std::vector<std::string> kTerms = {"calcified granuloma", "granuloma", "scoliosis",
                                                  "osteophytes", "degenerative changes", "scarring",
                                                  "tortuous aorta", "spondylosis"};
  return kTerms;
}

const std::vector<std::string>& normal_sentences() {
  static const std::vector<std::string> kSentences = {
      "Heart size is normal.",          "The lungs are clear.",
      "No acute osseous abnormality.",  "Mediastinal contours are unremarkable.",
      "Trachea is midline.",            "Visualized osseous structures are intact.",
      "Pulmonary vasculature is within normal limits.", "No acute cardiopulmonary process."};
  return kSentences;
}

const std::vector<std::string>& locations() {
  static const std::vector<std::string> kLoc = {"left base", "right base", "left apex", "right apex",
                                                "right upper lobe", "left lower lobe", "lingula",
                                                "right middle lobe", "bilateral bases", "perihilar region"};
  return kLoc;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
  return items[rng.below(items.size())];
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

// One slot sentence; the template is drawn without looking at whether the
// term is a labelled finding or an incidental one.
std::string slot_sentence(Rng& rng, const std::string& term) {
  char num[16];
  std::snprintf(num, sizeof num, "%.1f", 0.5 + static_cast<double>(rng.below(40)) / 10.0);
  const std::string& loc = pick(rng, locations());
  switch (rng.below(5)) {
    case 0: return capitalize(term) + " is seen at the " + loc + ".";
    case 1: return "There is " + pick(rng, std::vector<std::string>{"mild", "small", "moderate"}) + " " + term + ".";
    case 2: return capitalize(term) + " measuring " + num + " cm in the " + loc + ".";
    case 3: return "Stable " + term + ".";
    default: return capitalize(term) + " again noted.";
  }
}

std::string section(Rng& rng, const std::vector<std::size_t>& positives, const GeneratorConfig& cfg,
                    std::size_t normals) {
  std::vector<std::string> sentences;
  for (std::size_t k = 0; k < kSlotsPerSection; ++k) {
    const bool leak = k < positives.size() && rng.bernoulli(cfg.leak_prob);
    const std::string term = leak ? pick(rng, finding_terms()[positives[k]]) : pick(rng, incidental_terms());
    sentences.push_back(slot_sentence(rng, term));
  }
  for (std::size_t k = 0; k < normals; ++k) sentences.push_back(pick(rng, normal_sentences()));
  rng.shuffle(std::span(sentences));
  std::string out;
  for (const auto& s : sentences) out += (out.empty() ? "" : " ") + s;
  return out;
}

}  // namespace

std::vector<Sample> generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  const Rng root = Rng(cfg.seed).split("synthetic");

  // One unit direction per label in feature space.
  std::vector<std::vector<double>> directions(kNumLabels, std::vector<double>(kFeatureDim));
  if (cfg.vision_features) {
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      Rng r = root.split("direction").split(j);
      double norm = 0;
      for (auto& v : directions[j]) {
        v = r.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : directions[j]) v /= norm;
    }
  }

  std::vector<Sample> out;
  for (std::size_t p = 0; p < cfg.patients; ++p) {
    Rng rng = root.split("patient").split(p);
    char pid[32];
    std::snprintf(pid, sizeof pid, "p%05zu", p);
    std::vector<int> labels(kNumLabels);
    for (std::size_t j = 0; j < kNumLabels; ++j) labels[j] = rng.bernoulli(cfg.prevalence[j]) ? 1 : 0;
    const std::size_t studies = 1 + rng.below(cfg.max_studies_per_patient);

    for (std::size_t s = 0; s < studies; ++s) {
      Rng study = rng.split("study").split(s);
      Sample sample;
      sample.id = std::string(pid) + "_s" + std::to_string(s);
      sample.patient_id = pid;
      sample.labels = labels;

      std::vector<std::size_t> text_pos;
      for (std::size_t j = 0; j < kNumLabels; ++j) {
        if (labels[j] && cfg.plan.in_text(j)) text_pos.push_back(j);
      }
      Rng text_rng = study.split("text");
      text_rng.shuffle(std::span(text_pos));
      std::string text = "FINDINGS: " + section(text_rng, text_pos, cfg, 2);
      for (auto j : text_pos) {
        if (text_rng.bernoulli(cfg.cue_prob)) text += " " + cue_sentences()[j];
      }
      text_rng.shuffle(std::span(text_pos));
      text += " IMPRESSION: " + section(text_rng, text_pos, cfg, 1);
      sample.text = std::move(text);

      if (cfg.vision_features) {
        Rng vr = study.split("vision");
        sample.vision_features.resize(kFeatureDim);
        for (auto& v : sample.vision_features) v = vr.normal();
        for (std::size_t j = 0; j < kNumLabels; ++j) {
          if (!labels[j] || !cfg.plan.in_vision(j)) continue;
          for (std::size_t d = 0; d < kFeatureDim; ++d) sample.vision_features[d] += cfg.vision_signal * directions[j][d];
        }
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

}  // namespace petfuse
