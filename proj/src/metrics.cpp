// SPDX-License-Identifier: Apache-2.0
#include "petfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "petfuse/error.hpp"

namespace petfuse::metrics {

namespace {

void check_aligned(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("labels must be 0 or 1");
  }
}

std::vector<std::size_t> order_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

std::optional<double> auroc_label(std::span<const double> scores, std::span<const int> labels) {
  check_aligned(scores, labels);
  const std::size_t n = scores.size();
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  // Walk groups of tied scores from the top; every negative below a positive
  // is a correctly ordered pair, negatives in the same group count half.
  const auto idx = order_descending(scores);
  double correct = 0;
  std::size_t neg_remaining = neg;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t gp = 0, gn = 0;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? gp : gn)++;
      ++j;
    }
    neg_remaining -= gn;
    correct += static_cast<double>(gp) * (static_cast<double>(neg_remaining) + 0.5 * static_cast<double>(gn));
    i = j;
  }
  return correct / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> auprc_label(std::span<const double> scores, std::span<const int> labels) {
  check_aligned(scores, labels);
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0) return std::nullopt;
  const auto idx = order_descending(scores);
  const std::size_t n = scores.size();
  double ap = 0, prev_recall = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      tp += labels[idx[j]] == 1;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::optional<double> macro_average(std::span<const std::optional<double>> values) {
  double total = 0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      total += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

std::optional<double> macro_average(std::span<const double> values, std::span<const bool> valid) {
  if (values.size() != valid.size()) throw InputError("values and validity mask differ in length");
  std::vector<std::optional<double>> opt(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (valid[i]) opt[i] = values[i];
  }
  return macro_average(opt);
}

void PredictionSet::validate() const {
  if (probabilities.size() != num_samples * num_labels || labels.size() != probabilities.size()) {
    throw InputError("prediction set shape mismatch");
  }
  if (!label_names.empty() && label_names.size() != num_labels) {
    throw InputError("label names do not match label count");
  }
  for (double p : probabilities) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw InputError("probabilities must be finite in [0, 1]");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("labels must be 0 or 1");
  }
}

std::vector<double> PredictionSet::column_scores(std::size_t label) const {
  std::vector<double> out(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) out[i] = probabilities[i * num_labels + label];
  return out;
}

std::vector<int> PredictionSet::column_labels(std::size_t label) const {
  std::vector<int> out(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) out[i] = labels[i * num_labels + label];
  return out;
}

CalibrationReport ece(const PredictionSet& predictions, std::size_t bins) {
  if (bins == 0) throw InputError("ECE needs at least one bin");
  predictions.validate();
  if (predictions.probabilities.empty()) throw InputError("ECE of an empty prediction set");

  CalibrationReport r;
  r.num_bins = bins;
  r.pairs = predictions.probabilities.size();
  std::vector<double> conf_sum(bins, 0.0), correct(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < r.pairs; ++i) {
    const double p = predictions.probabilities[i];
    const double conf = std::max(p, 1.0 - p);
    const bool right = (p >= 0.5) == (predictions.labels[i] == 1);
    auto b = static_cast<std::size_t>((conf - 0.5) * 2.0 * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    conf_sum[b] += conf;
    correct[b] += right ? 1.0 : 0.0;
    ++count[b];
  }
  const double total = static_cast<double>(r.pairs);
  for (std::size_t b = 0; b < bins; ++b) {
    CalibrationBin bin;
    bin.lower = 0.5 + 0.5 * static_cast<double>(b) / static_cast<double>(bins);
    bin.upper = 0.5 + 0.5 * static_cast<double>(b + 1) / static_cast<double>(bins);
    bin.count = count[b];
    if (count[b] > 0) {
      const double c = static_cast<double>(count[b]);
      bin.confidence = conf_sum[b] / c;
      bin.accuracy = correct[b] / c;
      r.ece += (c / total) * std::abs(bin.accuracy - bin.confidence);
    }
    r.bins.push_back(bin);
  }
  return r;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void check_logits(std::span<const double> logits, std::span<const int> labels) {
  if (logits.empty()) throw InputError("temperature scaling needs a non-empty validation set");
  if (logits.size() != labels.size()) throw InputError("logits and labels differ in length");
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("temperature scaling: non-finite logit");
  }
}

// d/d(beta) of the mean BCE of sigmoid(beta * z); increasing in beta.
double nll_slope(std::span<const double> z, std::span<const int> y, double beta) {
  double g = 0;
  for (std::size_t i = 0; i < z.size(); ++i) g += (sigmoid(beta * z[i]) - y[i]) * z[i];
  return g / static_cast<double>(z.size());
}

}  // namespace

double temperature_nll(std::span<const double> logits, std::span<const int> labels, double temperature) {
  check_logits(logits, labels);
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = logits[i] / temperature;
    total += labels[i] == 1 ? softplus(-s) : softplus(s);
  }
  return total / static_cast<double>(logits.size());
}

double fit_temperature(std::span<const double> logits, std::span<const int> labels) {
  check_logits(logits, labels);
  // The loss is convex in beta = 1/T, so bisect on the sign of its slope.
  double lo = 1e-6, hi = 1e6;
  if (nll_slope(logits, labels, lo) >= 0) return 1.0 / lo;
  if (nll_slope(logits, labels, hi) <= 0) return 1.0 / hi;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (nll_slope(logits, labels, mid) < 0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi / lo - 1.0 < 1e-14) break;
  }
  return 2.0 / (lo + hi);
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0) || !std::isfinite(temperature)) throw NumericError("temperature must be positive");
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericError("apply_temperature: non-finite logit");
    out[i] = sigmoid(logits[i] / temperature);
  }
  return out;
}

EvalReport evaluate(const PredictionSet& predictions, std::size_t ece_bins) {
  predictions.validate();
  EvalReport r;
  std::vector<std::optional<double>> aurocs, auprcs;
  for (std::size_t l = 0; l < predictions.num_labels; ++l) {
    const auto s = predictions.column_scores(l);
    const auto y = predictions.column_labels(l);
    LabelResult lr;
    lr.name = predictions.label_names.empty() ? "label" + std::to_string(l) : predictions.label_names[l];
    lr.positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    lr.negatives = y.size() - lr.positives;
    lr.auroc = auroc_label(s, y);
    lr.auprc = lr.auroc ? auprc_label(s, y) : std::nullopt;
    if (!lr.auroc) r.excluded_labels.push_back(lr.name);
    aurocs.push_back(lr.auroc);
    auprcs.push_back(lr.auprc);
    r.per_label.push_back(std::move(lr));
  }
  r.auroc_macro = macro_average(aurocs);
  r.auprc_macro = macro_average(auprcs);
  r.calibration = ece(predictions, ece_bins);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : per_label) {
    labels.push_back({{"name", l.name},
                      {"auroc", opt(l.auroc)},
                      {"auprc", opt(l.auprc)},
                      {"positives", l.positives},
                      {"negatives", l.negatives}});
  }
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : calibration.bins) {
    bins.push_back({{"lower", b.lower}, {"upper", b.upper}, {"confidence", b.confidence},
                    {"accuracy", b.accuracy}, {"count", b.count}});
  }
  return {{"method", method},
          {"seed", seed},
          {"auroc_macro", opt(auroc_macro)},
          {"auprc_macro", opt(auprc_macro)},
          {"ece", calibration.ece},
          {"calibration", {{"bins", bins}, {"num_bins", calibration.num_bins}, {"pairs", calibration.pairs}}},
          {"per_label", labels},
          {"excluded_labels", excluded_labels},
          {"trainable_params", trainable_params},
          {"total_params", total_params},
          {"efficiency_pct", efficiency_pct}};
}

}  // namespace petfuse::metrics
