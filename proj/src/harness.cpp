// SPDX-License-Identifier: Apache-2.0
#include "petfuse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "petfuse/error.hpp"
#include "petfuse/labels.hpp"
#include "petfuse/pet.hpp"

namespace petfuse {

using nlohmann::json;

std::string to_string(ArmKind k) {
  switch (k) {
    case ArmKind::vision_only: return "vision_only";
    case ArmKind::budget_matched: return "budget_matched";
    case ArmKind::full_pet: return "full_pet";
    case ArmKind::full_finetune: return "full_finetune";
  }
  return "?";
}

ArmKind arm_kind_from_string(const std::string& s) {
  if (s == "vision_only") return ArmKind::vision_only;
  if (s == "budget_matched") return ArmKind::budget_matched;
  if (s == "full_pet") return ArmKind::full_pet;
  if (s == "full_finetune") return ArmKind::full_finetune;
  throw ConfigError("unknown arm kind: " + s);
}

// ---------------------------------------------------------------------------
// Budget search

std::size_t budget_head_hidden(std::size_t shared_dim) {
  return std::max<std::size_t>(14, (shared_dim + 1) / 2);
}

BudgetSearch search_fusion_budget(std::uint64_t target, const FusionConfig& base, double tolerance,
                                  std::size_t max_dim) {
  if (target == 0) throw ConfigError("budget target must be positive");
  if (max_dim == 0) throw ConfigError("budget search needs max_dim >= 1");
  std::vector<BudgetCandidate> all;
  all.reserve(max_dim);
  for (std::size_t d = 1; d <= max_dim; ++d) {
    FusionConfig f = base;
    f.shared_dim = d;
    f.head_hidden = budget_head_hidden(d);
    all.push_back({d, f.head_hidden, f.parameter_count()});
  }
  auto gap = [target](const BudgetCandidate& c) {
    return c.params > target ? c.params - target : target - c.params;
  };
  // Stable sort keeps smaller d first among equal gaps.
  std::stable_sort(all.begin(), all.end(), [&](const auto& a, const auto& b) { return gap(a) < gap(b); });
  BudgetSearch out;
  out.best = all.front();
  out.relative_diff =
      (static_cast<double>(out.best.params) - static_cast<double>(target)) / static_cast<double>(target);
  out.nearest.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(5, all.size())));
  if (std::abs(out.relative_diff) > tolerance) {
    std::string msg = "no fusion width within " + std::to_string(100.0 * tolerance) + "% of " +
                      std::to_string(target) + " trainable parameters; nearest:";
    for (const auto& c : out.nearest) {
      msg += " d=" + std::to_string(c.shared_dim) + "/h=" + std::to_string(c.head_hidden) + " (" +
             std::to_string(c.params) + ")";
    }
    throw SearchError(msg);
  }
  return out;
}

AppConfig build_arm(ArmKind kind, const AppConfig& base, std::optional<std::uint64_t> budget_target) {
  AppConfig c = base;
  switch (kind) {
    case ArmKind::vision_only:
      c.model.architecture = Architecture::vision_only;
      c.model.vision_head.vision_in = c.model.vision.output_dim;
      c.pet.policy = PetPolicy::frozen;
      break;
    case ArmKind::budget_matched: {
      c.model.architecture = Architecture::fusion;
      c.pet.policy = PetPolicy::frozen;
      VisionHeadConfig head = c.model.vision_head;
      head.vision_in = c.model.vision.output_dim;
      const auto found = search_fusion_budget(budget_target.value_or(head.parameter_count()), c.model.fusion);
      c.model.fusion.shared_dim = found.best.shared_dim;
      c.model.fusion.head_hidden = found.best.head_hidden;
      break;
    }
    case ArmKind::full_pet:
      c.model.architecture = Architecture::fusion;
      break;
    case ArmKind::full_finetune:
      c.model.architecture = Architecture::fusion;
      c.model.vision.kind = EncoderKind::mini_vision;
      c.model.text.kind = EncoderKind::mini_text;
      c.pet.policy = PetPolicy::full;
      // The desk-scale encoders are far smaller than the declared backbone total.
      c.model.declared_total_params = 0;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Single runs

SplitSamples split_samples(const std::vector<Sample>& samples, const SplitSpec& spec) {
  const auto idx = split_patients(samples, spec);
  return {select(samples, idx.train), select(samples, idx.val), select(samples, idx.test)};
}

std::unique_ptr<Model> make_model(const AppConfig& cfg, Vocabulary vocabulary) {
  if (cfg.model.architecture == Architecture::fusion && cfg.model.text.kind == EncoderKind::precomputed) {
    throw ConfigError("manifests carry no text features; use the mini-text encoder");
  }
  auto model = std::make_unique<Model>(cfg.model, std::move(vocabulary), cfg.seed);
  apply_policy(*model, cfg.pet, Rng(cfg.seed).split("pet"));
  return model;
}

std::unique_ptr<Model> make_model(const AppConfig& cfg, const std::vector<Sample>& train_samples) {
  std::vector<std::string> texts;
  texts.reserve(train_samples.size());
  for (const auto& s : train_samples) texts.push_back(s.text);
  return make_model(cfg, Vocabulary::build(texts));
}

std::vector<Example> make_examples(const Model& model, const std::vector<Sample>& samples) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.vision_features.empty()) throw InputError("sample " + s.id + " has no vision features");
    Example e;
    e.input = model.prepare(s.vision_features, s.text);
    e.targets.assign(s.labels.begin(), s.labels.end());
    out.push_back(std::move(e));
  }
  return out;
}

metrics::PredictionSet to_prediction_set(std::span<const double> logits, const std::vector<Sample>& samples,
                                         double temperature) {
  metrics::PredictionSet ps;
  ps.num_samples = samples.size();
  ps.num_labels = kNumLabels;
  if (logits.size() != ps.num_samples * ps.num_labels) throw DimensionError("logits do not match samples");
  ps.probabilities = metrics::apply_temperature(logits, temperature);
  for (const auto& s : samples) ps.labels.insert(ps.labels.end(), s.labels.begin(), s.labels.end());
  for (auto name : kLabelNames) ps.label_names.emplace_back(name);
  return ps;
}

RunOutcome run_single(const AppConfig& cfg, const std::vector<Sample>& samples, const std::string& method,
                      const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto parts = split_samples(samples, cfg.split);
  if (parts.train.empty() || parts.val.empty() || parts.test.empty()) {
    throw InputError("every split needs at least one sample");
  }
  auto model = make_model(cfg, parts.train);
  const auto train_set = make_examples(*model, parts.train);
  if (cfg.model.normalize_features) {
    std::vector<ModelInput> inputs;
    for (const auto& e : train_set) inputs.push_back(e.input);
    model->fit_feature_norms(inputs);
  }
  const auto val_set = make_examples(*model, parts.val);
  const auto test_set = make_examples(*model, parts.test);

  RunOutcome out;
  AdamW optimizer(AdamWOptions{.weight_decay = cfg.train.weight_decay});
  out.training = train(*model, train_set, val_set, cfg.train, optimizer);
  const auto logits = predict_logits(*model, test_set);
  out.report = metrics::evaluate(to_prediction_set(logits, parts.test), cfg.ece_bins);
  out.report.method = method;
  out.report.seed = cfg.seed;
  out.budget = count_params(model->graph(), cfg.model.declared_total_params);
  out.report.trainable_params = out.budget.trainable;
  out.report.total_params = out.budget.total;
  out.report.efficiency_pct = out.budget.efficiency_pct();

  if (!out_dir.empty()) {
    echo_config(cfg, out_dir);
    write_history_csv(out_dir / "history.csv", out.training.history);
    std::ofstream(out_dir / "report.json") << out.report.to_json().dump(2) << '\n';
    const json meta = {{"method", method},
                       {"config", to_json(cfg)},
                       {"vocabulary", model->vocabulary().tokens()},
                       {"feature_norm",
                        {{"vision", model->vision_norm().to_json()}, {"text", model->text_norm().to_json()}}},
                       {"best_epoch", out.training.best_epoch}};
    save_checkpoint(out_dir / "model.ckpt", model->graph(), optimizer, meta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plans

namespace {

bool file_safe(const std::string& name) {
  if (name.empty() || name == "summary" || name == "per_label" || name == "efficiency") return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  }) && name.front() != '.';
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt("%.6f", *v) : ""; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError("bad " + what + " value: '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError("bad " + what + " value: '" + s + "'");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string per_label_csv(const ExperimentPlan& plan, const std::vector<metrics::EvalReport>& reports) {
  std::string csv = "label";
  for (const auto& arm : plan.arms) csv += "," + arm.name;
  csv += "\n";
  auto cell = [&](const std::string& arm, auto&& pick) {
    std::vector<double> v;
    for (const auto& r : reports) {
      if (r.method != arm) continue;
      if (auto x = pick(r)) v.push_back(*x);
    }
    return opt_fmt(mean_of(v));
  };
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    csv += std::string(kLabelNames[l]);
    for (const auto& arm : plan.arms) {
      csv += "," + cell(arm.name, [l](const metrics::EvalReport& r) { return r.per_label[l].auroc; });
    }
    csv += "\n";
  }
  csv += "Macro Avg";
  for (const auto& arm : plan.arms) {
    csv += "," + cell(arm.name, [](const metrics::EvalReport& r) { return r.auroc_macro; });
  }
  return csv + "\n";
}

}  // namespace

void ExperimentPlan::validate() const {
  if (arms.empty()) throw ConfigError("plan has no arms");
  std::set<std::string> names;
  for (const auto& a : arms) {
    if (!file_safe(a.name)) throw ConfigError("arm name must be a plain file name: '" + a.name + "'");
    if (!names.insert(a.name).second) throw ConfigError("duplicate arm name: " + a.name);
    if (a.seeds.empty()) throw ConfigError("arm " + a.name + " has no seeds");
  }
}

ExperimentPlan plan_from_json(const json& j) {
  static const std::set<std::string> kPlanKeys = {"config", "arms", "seeds", "data", "output"};
  static const std::set<std::string> kArmKeys = {"name", "kind", "config", "seeds", "budget_target"};
  if (!j.is_object()) throw ConfigError("plan must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!kPlanKeys.count(k)) throw ConfigError("unknown plan key: " + k);
  }
  ExperimentPlan plan;
  try {
    plan.base = j.value("config", json::object());
    plan.data = j.value("data", std::string{});
    plan.output = j.value("output", std::string{});
    const auto default_seeds = j.value("seeds", std::vector<std::uint64_t>{});
    if (!j.contains("arms") || !j.at("arms").is_array()) throw ConfigError("plan needs an 'arms' array");
    for (const auto& a : j.at("arms")) {
      for (const auto& [k, v] : a.items()) {
        if (!kArmKeys.count(k)) throw ConfigError("unknown arm key: " + k);
      }
      ArmSpec arm;
      arm.kind = arm_kind_from_string(a.at("kind").get<std::string>());
      arm.name = a.value("name", to_string(arm.kind));
      arm.overrides = a.value("config", json::object());
      arm.seeds = a.value("seeds", default_seeds);
      if (a.contains("budget_target")) arm.budget_target = a.at("budget_target").get<std::uint64_t>();
      plan.arms.push_back(std::move(arm));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  }
  plan.validate();
  // Surface config errors before any training starts.
  for (const auto& arm : plan.arms) {
    json tree = to_json(AppConfig{});
    merge_strict(tree, plan.base, "config");
    merge_strict(tree, arm.overrides, arm.name + ".config");
  }
  return plan;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open plan: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("plan is not valid JSON: " + path.string());
  return plan_from_json(j);
}

json to_json(const ExperimentPlan& plan) {
  json arms = json::array();
  for (const auto& a : plan.arms) {
    json arm = {{"name", a.name}, {"kind", to_string(a.kind)}, {"config", a.overrides}, {"seeds", a.seeds}};
    if (a.budget_target) arm["budget_target"] = *a.budget_target;
    arms.push_back(std::move(arm));
  }
  json j = {{"config", plan.base}, {"arms", arms}};
  if (!plan.data.empty()) j["data"] = plan.data;
  if (!plan.output.empty()) j["output"] = plan.output;
  return j;
}

SummaryRow summary_row(const metrics::EvalReport& r) {
  return {r.method, r.seed, r.auroc_macro, r.auprc_macro, r.calibration.ece, r.trainable_params,
          r.total_params, r.efficiency_pct};
}

std::string summary_csv_header() {
  return "method,seed,auroc_macro,auprc_macro,ece,trainable_params,total_params,efficiency_pct";
}

std::string format_summary_row(const SummaryRow& r) {
  return r.method + "," + std::to_string(r.seed) + "," + opt_fmt(r.auroc_macro) + "," + opt_fmt(r.auprc_macro) +
         "," + fmt("%.6f", r.ece) + "," + std::to_string(r.trainable_params) + "," +
         std::to_string(r.total_params) + "," + fmt("%.2f", r.efficiency_pct);
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::string text = summary_csv_header() + "\n";
  for (const auto& r : rows) text += format_summary_row(r) + "\n";
  write_text(path, text);
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != summary_csv_header()) {
    throw ParseError(1, path.string() + ": unexpected header");
  }
  std::vector<SummaryRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 8) throw ParseError(lineno, path.string() + ": expected 8 columns");
    try {
      SummaryRow r;
      r.method = cells[0];
      r.seed = parse_u64(cells[1], "seed");
      if (!cells[2].empty()) r.auroc_macro = parse_double(cells[2], "auroc_macro");
      if (!cells[3].empty()) r.auprc_macro = parse_double(cells[3], "auprc_macro");
      r.ece = parse_double(cells[4], "ece");
      r.trainable_params = parse_u64(cells[5], "trainable_params");
      r.total_params = parse_u64(cells[6], "total_params");
      r.efficiency_pct = parse_double(cells[7], "efficiency_pct");
      rows.push_back(std::move(r));
    } catch (const InputError& e) {
      throw ParseError(lineno, path.string() + ": " + e.what());
    }
  }
  return rows;
}

json AttributionResult::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json means = json::object();
  for (const auto& [arm, m] : arm_means) means[arm] = m;
  json fails = json::array();
  for (const auto& f : failures) fails.push_back({{"arm", f.arm}, {"seed", f.seed}, {"error", f.error}});
  return {{"arm_mean_auroc", means},
          {"fusion_effect", opt(fusion_effect)},
          {"scaling_effect", opt(scaling_effect)},
          {"multimodal_gain", opt(multimodal_gain)},
          {"failures", fails}};
}

AttributionResult attribute(const ExperimentPlan& plan, std::vector<SummaryRow> rows,
                            std::vector<ArmFailure> failures) {
  AttributionResult out;
  out.rows = std::move(rows);
  out.failures = std::move(failures);
  std::map<ArmKind, std::string> first_of_kind;
  for (const auto& arm : plan.arms) {
    first_of_kind.emplace(arm.kind, arm.name);
    std::vector<double> v;
    for (const auto& r : out.rows) {
      if (r.method == arm.name && r.auroc_macro) v.push_back(*r.auroc_macro);
    }
    if (auto m = mean_of(v)) out.arm_means.emplace_back(arm.name, *m);
  }
  auto mean_for = [&](ArmKind kind) -> std::optional<double> {
    auto it = first_of_kind.find(kind);
    if (it == first_of_kind.end()) return std::nullopt;
    for (const auto& [name, m] : out.arm_means) {
      if (name == it->second) return m;
    }
    return std::nullopt;
  };
  const auto vision = mean_for(ArmKind::vision_only);
  const auto matched = mean_for(ArmKind::budget_matched);
  const auto full = mean_for(ArmKind::full_pet);
  if (matched && vision) out.fusion_effect = *matched - *vision;
  if (full && matched) out.scaling_effect = *full - *matched;
  if (full && vision) out.multimodal_gain = *full - *vision;
  return out;
}

AttributionResult run_plan(const ExperimentPlan& plan, const std::vector<Sample>& samples,
                           const std::filesystem::path& out_dir, std::size_t jobs) {
  plan.validate();
  if (out_dir.empty()) throw ConfigError("plan output directory is empty");
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "plan.json", to_json(plan).dump(2) + "\n");

  struct Job {
    std::size_t arm;
    std::uint64_t seed;
    std::optional<AppConfig> cfg;
    std::optional<metrics::EvalReport> report;
    std::string error;
  };
  std::vector<Job> work;
  std::vector<std::string> arm_errors(plan.arms.size());
  for (std::size_t a = 0; a < plan.arms.size(); ++a) {
    const auto& arm = plan.arms[a];
    // A broken arm (bad config, failed budget search) is recorded once per
    // seed and the other arms carry on.
    std::optional<AppConfig> base;
    try {
      json tree = to_json(AppConfig{});
      merge_strict(tree, plan.base, "config");
      merge_strict(tree, arm.overrides, arm.name + ".config");
      base = build_arm(arm.kind, app_config_from_json(tree), arm.budget_target);
    } catch (const std::exception& e) {
      arm_errors[a] = e.what();
    }
    for (auto seed : arm.seeds) {
      Job job{a, seed, std::nullopt, std::nullopt, arm_errors[a]};
      if (base) {
        job.cfg = *base;
        job.cfg->seed = seed;
        job.cfg->sync_seeds();
      }
      work.push_back(std::move(job));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      Job& job = work[i];
      if (!job.cfg) continue;
      const auto& arm = plan.arms[job.arm];
      try {
        const auto dir = out_dir / arm.name / ("seed" + std::to_string(job.seed));
        std::filesystem::create_directories(dir);
        job.report = run_single(*job.cfg, samples, arm.name, dir).report;
      } catch (const std::exception& e) {
        job.error = e.what();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, work.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Results are written in plan order regardless of completion order.
  std::vector<SummaryRow> rows;
  std::vector<metrics::EvalReport> reports;
  std::vector<ArmFailure> failures;
  for (std::size_t a = 0; a < plan.arms.size(); ++a) {
    std::vector<SummaryRow> arm_rows;
    for (const auto& job : work) {
      if (job.arm != a) continue;
      if (job.report) {
        arm_rows.push_back(summary_row(*job.report));
        reports.push_back(*job.report);
      } else {
        failures.push_back({plan.arms[a].name, job.seed, job.error});
      }
    }
    write_summary_csv(out_dir / (plan.arms[a].name + ".csv"), arm_rows);
    rows.insert(rows.end(), arm_rows.begin(), arm_rows.end());
  }
  write_summary_csv(out_dir / "summary.csv", rows);
  write_text(out_dir / "per_label.csv", per_label_csv(plan, reports));

  auto result = attribute(plan, read_summary_csv(out_dir / "summary.csv"), std::move(failures));
  write_text(out_dir / "attribution.json", result.to_json().dump(2) + "\n");
  write_text(out_dir / "efficiency.csv", format_efficiency_csv(efficiency_table(result.rows)));
  return result;
}

// ---------------------------------------------------------------------------
// Efficiency

std::optional<long long> auroc_per_million(double auroc, std::uint64_t trainable_params) {
  const double millions = std::round(static_cast<double>(trainable_params) / 1e4) / 100.0;
  if (millions <= 0.0) return std::nullopt;
  return std::llround(auroc / millions * 1000.0);
}

std::vector<EfficiencyRow> efficiency_table(const std::vector<SummaryRow>& rows, const std::string& reference) {
  std::vector<EfficiencyRow> table;
  std::vector<std::vector<double>> aurocs;
  for (const auto& r : rows) {
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.method == r.method; });
    std::size_t k = static_cast<std::size_t>(it - table.begin());
    if (it == table.end()) {
      table.push_back({r.method, 0.0, r.trainable_params, std::nullopt, std::nullopt, 0});
      aurocs.emplace_back();
    }
    if (r.auroc_macro) aurocs[k].push_back(*r.auroc_macro);
  }
  for (std::size_t k = 0; k < table.size(); ++k) {
    table[k].auroc = mean_of(aurocs[k]).value_or(std::nan(""));
    if (!aurocs[k].empty()) table[k].auroc_per_million = auroc_per_million(table[k].auroc, table[k].trainable_params);
  }
  const EfficiencyRow* ref = nullptr;
  for (const auto& e : table) {
    if (e.method == reference || (reference.empty() && !ref)) ref = &e;
  }
  if (ref && ref->auroc_per_million && *ref->auroc_per_million != 0) {
    const double base = static_cast<double>(*ref->auroc_per_million);
    for (auto& e : table) {
      if (e.auroc_per_million) e.efficiency_ratio = static_cast<double>(*e.auroc_per_million) / base;
    }
  }
  std::vector<std::size_t> order(table.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double x = std::isnan(table[a].auroc) ? -1.0 : table[a].auroc;
    const double y = std::isnan(table[b].auroc) ? -1.0 : table[b].auroc;
    return x > y;
  });
  for (std::size_t r = 0; r < order.size(); ++r) table[order[r]].rank = r + 1;
  return table;
}

std::string format_efficiency_csv(const std::vector<EfficiencyRow>& rows) {
  std::string csv = "method,auroc,trainable_params,auroc_per_million,efficiency_ratio,rank\n";
  for (const auto& e : rows) {
    csv += e.method + "," + (std::isnan(e.auroc) ? std::string() : fmt("%.4f", e.auroc)) + "," +
           std::to_string(e.trainable_params) + "," +
           (e.auroc_per_million ? std::to_string(*e.auroc_per_million) : std::string()) + "," +
           (e.efficiency_ratio ? fmt("%.3f", *e.efficiency_ratio) : std::string()) + "," + std::to_string(e.rank) +
           "\n";
  }
  return csv;
}

std::string regenerate_report(const std::filesystem::path& dir) {
  const auto plan = load_plan(dir / "plan.json");
  std::vector<ArmFailure> failures;
  if (std::ifstream in(dir / "attribution.json"); in) {
    const json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.contains("failures")) {
      for (const auto& f : j.at("failures")) {
        failures.push_back({f.at("arm").get<std::string>(), f.at("seed").get<std::uint64_t>(),
                            f.at("error").get<std::string>()});
      }
    }
  }
  const auto result = attribute(plan, read_summary_csv(dir / "summary.csv"), failures);
  std::string reference;
  for (const auto& arm : plan.arms) {
    if (arm.kind == ArmKind::vision_only) {
      reference = arm.name;
      break;
    }
  }
  const auto table = efficiency_table(result.rows, reference);

  std::string md = "## Results\n\n| Method | Seeds | AUROC | AUPRC | ECE | Trainable | Efficiency % |\n"
                   "|---|---|---|---|---|---|---|\n";
  for (const auto& arm : plan.arms) {
    std::vector<double> auroc, auprc, ece;
    const SummaryRow* any = nullptr;
    for (const auto& r : result.rows) {
      if (r.method != arm.name) continue;
      any = &r;
      if (r.auroc_macro) auroc.push_back(*r.auroc_macro);
      if (r.auprc_macro) auprc.push_back(*r.auprc_macro);
      ece.push_back(r.ece);
    }
    if (!any) {
      md += "| " + arm.name + " | 0 | failed | | | | |\n";
      continue;
    }
    md += "| " + arm.name + " | " + std::to_string(ece.size()) + " | " + opt_fmt(mean_of(auroc)) + " | " +
          opt_fmt(mean_of(auprc)) + " | " + opt_fmt(mean_of(ece)) + " | " + std::to_string(any->trainable_params) +
          " | " + fmt("%.2f", any->efficiency_pct) + " |\n";
  }
  md += "\n## Parameter efficiency\n\n| Method | AUROC | Trainable | AUROC per million | Ratio | Rank |\n"
        "|---|---|---|---|---|---|\n";
  for (const auto& e : table) {
    md += "| " + e.method + " | " + (std::isnan(e.auroc) ? std::string("n/a") : fmt("%.4f", e.auroc)) + " | " +
          fmt("%.2fM", static_cast<double>(e.trainable_params) / 1e6) + " | " +
          (e.auroc_per_million ? std::to_string(*e.auroc_per_million) : std::string("undefined")) + " | " +
          (e.efficiency_ratio ? fmt("%.3fx", *e.efficiency_ratio) : std::string("n/a")) + " | " +
          std::to_string(e.rank) + " |\n";
  }
  md += "\n## Attribution\n\n";
  md += "- fusion effect (budget-matched minus vision-only): " + opt_fmt(result.fusion_effect) + "\n";
  md += "- scaling effect (full PET minus budget-matched): " + opt_fmt(result.scaling_effect) + "\n";
  md += "- multimodal gain (full PET minus vision-only): " + opt_fmt(result.multimodal_gain) + "\n";
  if (!result.failures.empty()) {
    md += "\n## Failures\n\n";
    for (const auto& f : result.failures) md += "- " + f.arm + " seed " + std::to_string(f.seed) + ": " + f.error + "\n";
  }
  return md;
}

}  // namespace petfuse
