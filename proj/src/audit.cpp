// SPDX-License-Identifier: Apache-2.0
#include "petfuse/audit.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "petfuse/error.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/tokenizer.hpp"
#include "petfuse/training.hpp"

namespace petfuse {

namespace {

// Dense [docs x vocab] token counts.
std::vector<double> count_matrix(const std::vector<std::vector<std::string>>& tokens,
                                 const std::vector<std::size_t>& docs,
                                 const std::map<std::string, std::size_t>& index) {
  std::vector<double> x(docs.size() * index.size(), 0.0);
  for (std::size_t r = 0; r < docs.size(); ++r) {
    for (const auto& t : tokens[docs[r]]) {
      auto it = index.find(t);
      if (it != index.end()) x[r * index.size() + it->second] += 1.0;
    }
  }
  return x;
}

}  // namespace

TextProbe fit_text_probe(const std::vector<std::string>& docs, const std::vector<std::vector<int>>& labels,
                         const SplitIndices& split, const AuditConfig& cfg) {
  if (docs.size() != labels.size()) throw InputError("corpus and labels are not aligned");
  if (split.train.empty() || split.test.empty()) throw InputError("audit needs non-empty train and test splits");
  const std::size_t num_labels = labels.empty() ? 0 : labels[0].size();
  for (const auto& y : labels) {
    if (y.size() != num_labels) throw InputError("label vectors differ in length");
  }
  for (auto i : split.train) {
    if (i >= docs.size()) throw InputError("split index out of range");
  }
  for (auto i : split.test) {
    if (i >= docs.size()) throw InputError("split index out of range");
  }

  std::vector<std::vector<std::string>> tokens(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) tokens[i] = tokenize(docs[i]);
  std::set<std::string> seen;
  for (auto i : split.train) seen.insert(tokens[i].begin(), tokens[i].end());
  TextProbe probe;
  probe.vocabulary.assign(seen.begin(), seen.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < probe.vocabulary.size(); ++k) index.emplace(probe.vocabulary[k], k);
  const std::size_t v = index.size();

  ModelGraph graph;
  graph.add("probe.weight", "probe", ParamRole::weight, ad::Tensor::zeros({std::max<std::size_t>(v, 1), num_labels}), true);
  graph.add("probe.bias", "probe", ParamRole::bias, ad::Tensor::zeros({num_labels}), true);
  const auto x_train = ad::Tensor::from({split.train.size(), std::max<std::size_t>(v, 1)},
                                        v ? count_matrix(tokens, split.train, index)
                                          : std::vector<double>(split.train.size(), 0.0));
  std::vector<double> y;
  for (auto i : split.train) {
    for (int l : labels[i]) y.push_back(l);
  }
  const auto y_train = ad::Tensor::from({split.train.size(), num_labels}, std::move(y));

  AdamW opt(AdamWOptions{.weight_decay = cfg.weight_decay});
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    graph.zero_grad();
    const auto logits = ad::add_bias(ad::matmul(x_train, graph.tensor("probe.weight")), graph.tensor("probe.bias"));
    ad::backward(ad::bce_with_logits(logits, y_train));
    opt.step(graph, cfg.lr);
  }

  const auto& w = graph.tensor("probe.weight");
  const auto& b = graph.tensor("probe.bias");
  probe.weights.assign(w.data().begin(), w.data().end());
  probe.bias.assign(b.data().begin(), b.data().end());

  const auto x_test = v ? count_matrix(tokens, split.test, index) : std::vector<double>(split.test.size(), 0.0);
  const std::size_t width = std::max<std::size_t>(v, 1);
  for (std::size_t l = 0; l < num_labels; ++l) {
    std::vector<double> score(split.test.size());
    std::vector<int> truth(split.test.size());
    for (std::size_t r = 0; r < split.test.size(); ++r) {
      double z = probe.bias[l];
      for (std::size_t k = 0; k < width; ++k) z += x_test[r * width + k] * probe.weights[k * num_labels + l];
      score[r] = z;
      truth[r] = labels[split.test[r]][l];
    }
    probe.per_label_auroc.push_back(metrics::auroc_label(score, truth));
  }
  probe.test_auroc = metrics::macro_average(probe.per_label_auroc);
  return probe;
}

AuditResult audit_leakage(const std::vector<std::string>& raw, const std::vector<std::string>& redacted,
                          const std::vector<std::vector<int>>& labels, const SplitIndices& split,
                          const AuditConfig& cfg) {
  if (raw.size() != redacted.size() || raw.size() != labels.size()) {
    throw InputError("raw corpus, redacted corpus and labels must align one to one");
  }
  const auto a = fit_text_probe(raw, labels, split, cfg);
  const auto b = fit_text_probe(redacted, labels, split, cfg);
  AuditResult r;
  r.auroc_raw = a.test_auroc;
  r.auroc_redacted = b.test_auroc;
  if (r.auroc_raw && r.auroc_redacted) r.delta = *r.auroc_raw - *r.auroc_redacted;
  r.raw_vocabulary = a.vocabulary.size();
  r.redacted_vocabulary = b.vocabulary.size();
  return r;
}

nlohmann::json AuditResult::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"auroc_raw", opt(auroc_raw)},
          {"auroc_redacted", opt(auroc_redacted)},
          {"delta", opt(delta)},
          {"raw_vocabulary", raw_vocabulary},
          {"redacted_vocabulary", redacted_vocabulary}};
}

}  // namespace petfuse
