// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "petfuse/audit.hpp"
#include "petfuse/config.hpp"
#include "petfuse/data.hpp"
#include "petfuse/error.hpp"
#include "petfuse/harness.hpp"
#include "petfuse/labels.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/pet.hpp"
#include "petfuse/redaction.hpp"
#include "petfuse/training.hpp"

namespace petfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_string() { return std::string("petfuse ") + PETFUSE_VERSION + " (" + PETFUSE_BUILD_HASH + ")"; }

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd, bool with_file = true) {
    if (with_file) cmd->add_option("--config", file, "JSON config file merged over the defaults");
    cmd->add_option("--set", sets, "Override a config value, e.g. --set train.lr=0.001 (repeatable)");
    cmd->add_option("--seed", seed, "Seed for every random stream (overrides the config)");
  }

  AppConfig resolve() const {
    auto overrides = sets;
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    return load_config(file, overrides);
  }
};

std::string with_commas(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string opt_fixed(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "n/a"; }

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

Lexicon lexicon_from(const std::string& dir) { return dir.empty() ? Lexicon::builtin() : Lexicon::load_dir(dir); }

json substitutions_json(const SubstitutionCounts& c) {
  return {{"finding", c.finding}, {"number", c.number}, {"location", c.location}, {"negation", c.negation}};
}

SignalPlan parse_channels(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  if (parts.size() == 1) return SignalPlan::uniform(channel_from_string(parts[0]));
  if (parts.size() != kNumLabels) {
    throw ConfigError("--channels takes one channel or " + std::to_string(kNumLabels) + " comma-separated ones");
  }
  SignalPlan plan;
  for (std::size_t i = 0; i < kNumLabels; ++i) plan.channels[i] = channel_from_string(parts[i]);
  return plan;
}

struct Restored {
  AppConfig cfg;
  std::unique_ptr<Model> model;
  std::string method;
};

Restored restore_model(const fs::path& checkpoint) {
  const auto ckpt = load_checkpoint(checkpoint);
  Restored r;
  try {
    r.cfg = app_config_from_json(ckpt.meta.at("config"));
    r.method = ckpt.meta.value("method", std::string("model"));
    r.model = make_model(r.cfg, Vocabulary::from_tokens(ckpt.meta.at("vocabulary").get<std::vector<std::string>>()));
    if (ckpt.meta.contains("feature_norm")) {
      const auto& n = ckpt.meta.at("feature_norm");
      r.model->set_feature_norms(FeatureNorm::from_json(n.at("vision")), FeatureNorm::from_json(n.at("text")));
    }
  } catch (const json::exception& e) {
    throw InputError("checkpoint metadata is incomplete: " + std::string(e.what()));
  }
  restore_values(r.model->graph(), ckpt.tensors);
  return r;
}

const std::vector<Sample>& pick_split(const SplitSamples& parts, const std::string& name) {
  if (name == "train") return parts.train;
  if (name == "val") return parts.val;
  if (name == "test") return parts.test;
  throw ConfigError("unknown split: " + name);
}

// --- commands ---------------------------------------------------------------

struct GenData {
  GeneratorConfig gen;
  std::string channels = "both";
  std::string out;
  bool no_vision = false;
  std::uint64_t seed = 0;

  int run(std::ostream& o) {
    gen.seed = seed;
    gen.plan = parse_channels(channels);
    gen.vision_features = !no_vision;
    const auto samples = generate_synthetic(gen);
    write_manifest(out, samples);
    std::size_t patients = 0;
    std::string last;
    for (const auto& s : samples) {
      if (s.patient_id != last) ++patients;
      last = s.patient_id;
    }
    o << "wrote " << samples.size() << " samples from " << patients << " patients to " << out << "\n";
    return kExitOk;
  }
};

struct Redact {
  std::string in, out, text, lexicon;
  bool strip_negation = false;

  int run(std::ostream& o) {
    const Redactor redactor(lexicon_from(lexicon), RedactOptions{.strip_negation = strip_negation});
    if (!text.empty()) {
      o << redactor.redact(text).text << "\n";
      return kExitOk;
    }
    if (in.empty() || out.empty()) throw ConfigError("redact needs --text, or both --in and --out");
    auto samples = load_manifest(in);
    SubstitutionCounts totals;
    for (auto& s : samples) {
      const auto r = redactor.redact(s.text);
      s.text = r.text;
      s.substitutions = substitutions_json(r.substitutions);
      totals.finding += r.substitutions.finding;
      totals.number += r.substitutions.number;
      totals.location += r.substitutions.location;
      totals.negation += r.substitutions.negation;
    }
    write_manifest(out, samples);
    o << "redacted " << samples.size() << " reports: " << substitutions_json(totals).dump() << "\n";
    return kExitOk;
  }
};

struct AuditCmd {
  ConfigFlags cfg;
  std::string data, redacted, lexicon, out;

  int run(std::ostream& o) {
    const auto app = cfg.resolve();
    const auto raw = load_manifest(data);
    std::vector<std::string> raw_text, red_text;
    std::vector<std::vector<int>> labels;
    if (!redacted.empty()) {
      const auto red = load_manifest(redacted);
      if (red.size() != raw.size()) throw InputError("raw and redacted manifests differ in length");
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (red[i].id != raw[i].id) throw InputError("manifests are not aligned at sample " + raw[i].id);
        red_text.push_back(red[i].text);
      }
    } else {
      const Redactor redactor(lexicon_from(lexicon));
      for (const auto& s : raw) red_text.push_back(redactor.redact(s.text).text);
    }
    for (const auto& s : raw) {
      raw_text.push_back(s.text);
      labels.push_back(s.labels);
    }
    const auto split = split_patients(raw, app.split);
    const auto result = audit_leakage(raw_text, red_text, labels, split, app.audit);
    const auto text = result.to_json().dump(2) + "\n";
    if (!out.empty()) {
      echo_config(app, out);
      write_file(fs::path(out) / "audit.json", text);
    }
    o << text;
    return kExitOk;
  }
};

struct Train {
  ConfigFlags cfg;
  std::string data, out, method = "model", arm;

  int run(std::ostream& o) {
    auto app = cfg.resolve();
    if (!arm.empty()) app = build_arm(arm_kind_from_string(arm), app);
    const auto samples = load_manifest(data);
    const auto outcome = run_single(app, samples, method, out);
    write_summary_csv(fs::path(out) / "summary.csv", {summary_row(outcome.report)});
    o << summary_csv_header() << "\n" << format_summary_row(summary_row(outcome.report)) << "\n";
    o << "best epoch " << outcome.training.best_epoch << " of " << outcome.training.history.size()
      << (outcome.training.stopped_early ? " (early stop)" : "") << "\n";
    return kExitOk;
  }
};

struct Eval {
  std::string checkpoint, data, out, split = "test";
  std::size_t bins = 0;

  int run(std::ostream& o) {
    auto r = restore_model(checkpoint);
    const auto samples = load_manifest(data);
    const auto parts = split_samples(samples, r.cfg.split);
    const auto& chosen = pick_split(parts, split);
    if (chosen.empty()) throw InputError("the " + split + " split is empty");
    const auto logits = predict_logits(*r.model, make_examples(*r.model, chosen));
    auto report = metrics::evaluate(to_prediction_set(logits, chosen), bins ? bins : r.cfg.ece_bins);
    const auto budget = count_params(r.model->graph(), r.cfg.model.declared_total_params);
    report.method = r.method;
    report.seed = r.cfg.seed;
    report.trainable_params = budget.trainable;
    report.total_params = budget.total;
    report.efficiency_pct = budget.efficiency_pct();
    if (!out.empty()) {
      write_file(fs::path(out) / "report.json", report.to_json().dump(2) + "\n");
      write_summary_csv(fs::path(out) / "summary.csv", {summary_row(report)});
    }
    o << summary_csv_header() << "\n" << format_summary_row(summary_row(report)) << "\n";
    for (const auto& l : report.per_label) {
      o << "  " << l.name << ": auroc " << opt_fixed(l.auroc, 4) << ", auprc " << opt_fixed(l.auprc, 4) << "\n";
    }
    return kExitOk;
  }
};

struct Calibrate {
  std::string checkpoint, data, out;

  int run(std::ostream& o) {
    auto r = restore_model(checkpoint);
    const auto samples = load_manifest(data);
    const auto parts = split_samples(samples, r.cfg.split);
    if (parts.val.empty() || parts.test.empty()) throw InputError("calibration needs val and test samples");
    const auto val_logits = predict_logits(*r.model, make_examples(*r.model, parts.val));
    const auto test_logits = predict_logits(*r.model, make_examples(*r.model, parts.test));
    std::vector<int> val_labels;
    for (const auto& s : parts.val) val_labels.insert(val_labels.end(), s.labels.begin(), s.labels.end());
    const double t = metrics::fit_temperature(val_logits, val_labels);
    const auto before = metrics::evaluate(to_prediction_set(test_logits, parts.test), r.cfg.ece_bins);
    const auto after = metrics::evaluate(to_prediction_set(test_logits, parts.test, t), r.cfg.ece_bins);
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    const json j = {{"temperature", t},
                    {"val_nll_before", metrics::temperature_nll(val_logits, val_labels, 1.0)},
                    {"val_nll_after", metrics::temperature_nll(val_logits, val_labels, t)},
                    {"test_ece_before", before.calibration.ece},
                    {"test_ece_after", after.calibration.ece},
                    {"test_auroc_before", opt(before.auroc_macro)},
                    {"test_auroc_after", opt(after.auroc_macro)}};
    const auto text = j.dump(2) + "\n";
    if (!out.empty()) write_file(fs::path(out) / "calibration.json", text);
    o << text;
    return kExitOk;
  }
};

struct CountParams {
  ConfigFlags cfg;
  std::string arm;
  bool as_json = false;

  int run(std::ostream& o) {
    auto app = cfg.resolve();
    if (!arm.empty()) app = build_arm(arm_kind_from_string(arm), app);
    const auto model = make_model(app, Vocabulary{});
    const auto report = count_params(model->graph(), app.model.declared_total_params);
    if (as_json) {
      o << report.to_json().dump(2) << "\n";
      return kExitOk;
    }
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %14s %8s %14s\n", "Component", "Trainable", "Share", "Total");
    o << line;
    auto emit = [&](const ComponentCount& c) {
      const double share = report.trainable ? 100.0 * static_cast<double>(c.trainable) / report.trainable : 0.0;
      std::snprintf(line, sizeof line, "%-28s %14s %7s%% %14s\n", c.component.c_str(),
                    with_commas(c.trainable).c_str(), fixed(share, 1).c_str(), with_commas(c.total).c_str());
      o << line;
    };
    for (const auto& c : report.components) {
      if (c.trainable) emit(c);
    }
    for (const auto& c : report.components) {
      if (!c.trainable) emit(c);
    }
    std::snprintf(line, sizeof line, "%-28s %14s %8s %14s\n", "Total", with_commas(report.trainable).c_str(), "",
                  with_commas(report.total).c_str());
    o << line;
    if (report.declared_total) {
      o << "Declared total parameters: " << with_commas(report.declared_total) << "\n";
    }
    o << "Trainable fraction: " << fixed(report.efficiency_pct(), 2) << "%\n";
    return kExitOk;
  }
};

struct Attribute {
  std::string plan, data, out;
  std::size_t jobs = 1;

  int run(std::ostream& o) {
    auto p = load_plan(plan);
    const std::string data_path = !data.empty() ? data : p.data;
    const std::string out_dir = !out.empty() ? out : p.output;
    if (data_path.empty()) throw ConfigError("no dataset: pass --data or set 'data' in the plan");
    if (out_dir.empty()) throw ConfigError("no output directory: pass --out or set 'output' in the plan");
    const auto samples = load_manifest(data_path);
    const auto result = run_plan(p, samples, out_dir, jobs);
    o << regenerate_report(out_dir);
    return result.failures.empty() ? kExitOk : kExitFailure;
  }
};

struct Report {
  std::string results, out;

  int run(std::ostream& o) {
    const auto md = regenerate_report(results);
    if (!out.empty()) write_file(out, md);
    o << md;
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parameter-efficient multimodal fusion experiments for chest X-ray findings", "petfuse"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic planted-signal manifest");
  gen_cmd->add_option("--patients", gen.gen.patients, "Number of patients")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--leak-prob", gen.gen.leak_prob, "Chance a positive finding is named per section")
      ->capture_default_str();
  gen_cmd->add_option("--cue-prob", gen.gen.cue_prob, "Chance of a redaction-proof cue per positive finding")
      ->capture_default_str();
  gen_cmd->add_option("--vision-signal", gen.gen.vision_signal, "Vision feature shift in noise units")
      ->capture_default_str();
  gen_cmd->add_option("--max-studies", gen.gen.max_studies_per_patient, "Studies per patient, at most")
      ->capture_default_str();
  gen_cmd->add_option("--channels", gen.channels,
                      "Signal channel for all labels, or 14 comma-separated: none|vision|text|both")
      ->capture_default_str();
  gen_cmd->add_flag("--no-vision-features", gen.no_vision, "Omit vision feature vectors");
  gen_cmd->add_option("--out", gen.out, "Output manifest (JSON lines)")->required();

  Redact red;
  auto* red_cmd = app.add_subcommand("redact", "Mask findings, numbers and locations in report text");
  red_cmd->add_option("--text", red.text, "Redact this text and print it");
  red_cmd->add_option("--in", red.in, "Input manifest");
  red_cmd->add_option("--out", red.out, "Output manifest");
  red_cmd->add_option("--lexicon", red.lexicon, "Directory with pathology/negation/location term lists");
  red_cmd->add_flag("--strip-negation", red.strip_negation, "Also delete negation terms");

  AuditCmd audit;
  auto* audit_cmd = app.add_subcommand("audit-leakage", "Compare text-only label recovery before and after redaction");
  audit.cfg.attach(audit_cmd);
  audit_cmd->add_option("--data", audit.data, "Raw manifest")->required();
  audit_cmd->add_option("--redacted", audit.redacted, "Redacted manifest (default: redact --data in memory)");
  audit_cmd->add_option("--lexicon", audit.lexicon, "Lexicon directory for in-memory redaction");
  audit_cmd->add_option("--out", audit.out, "Output directory for audit.json");

  Train train_cmd_state;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration and evaluate it on the test split");
  train_cmd_state.cfg.attach(train_cmd);
  train_cmd->add_option("--data", train_cmd_state.data, "Manifest")->required();
  train_cmd->add_option("--out", train_cmd_state.out, "Output directory")->required();
  train_cmd->add_option("--method", train_cmd_state.method, "Method name used in reports")->capture_default_str();
  train_cmd->add_option("--arm", train_cmd_state.arm, "Reshape the config into an arm kind first");

  Eval eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "model.ckpt from train")->required();
  eval_cmd->add_option("--data", eval.data, "Manifest")->required();
  eval_cmd->add_option("--split", eval.split, "train|val|test")->capture_default_str();
  eval_cmd->add_option("--bins", eval.bins, "ECE bins (default: from the checkpoint config)");
  eval_cmd->add_option("--out", eval.out, "Output directory");

  Calibrate cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit a temperature on val and apply it to test");
  cal_cmd->add_option("--checkpoint", cal.checkpoint, "model.ckpt from train")->required();
  cal_cmd->add_option("--data", cal.data, "Manifest")->required();
  cal_cmd->add_option("--out", cal.out, "Output directory");

  CountParams count;
  auto* count_cmd = app.add_subcommand("count-params", "Print the trainable-parameter breakdown");
  count.cfg.attach(count_cmd);
  count_cmd->add_option("--arm", count.arm, "vision_only|budget_matched|full_pet|full_finetune");
  count_cmd->add_flag("--json", count.as_json, "Print JSON instead of a table");

  Attribute attr;
  auto* attr_cmd = app.add_subcommand("attribute", "Run a multi-arm attribution plan");
  attr_cmd->add_option("--plan", attr.plan, "Plan JSON")->required();
  attr_cmd->add_option("--data", attr.data, "Manifest (overrides the plan)");
  attr_cmd->add_option("--out", attr.out, "Output directory (overrides the plan)");
  attr_cmd->add_option("--jobs", attr.jobs, "Concurrent arm/seed jobs")->capture_default_str()->check(
      CLI::PositiveNumber);

  Report rep;
  auto* rep_cmd = app.add_subcommand("report", "Rebuild summary tables from a results directory");
  rep_cmd->add_option("--results", rep.results, "Directory written by attribute")->required();
  rep_cmd->add_option("--out", rep.out, "Also write the Markdown here");

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'petfuse --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen.run(out);
    if (*red_cmd) return red.run(out);
    if (*audit_cmd) return audit.run(out);
    if (*train_cmd) return train_cmd_state.run(out);
    if (*eval_cmd) return eval.run(out);
    if (*cal_cmd) return cal.run(out);
    if (*count_cmd) return count.run(out);
    if (*attr_cmd) return attr.run(out);
    if (*rep_cmd) return rep.run(out);
  } catch (const ConfigError& e) {
    // Bad configuration is a usage problem: nothing ran.
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace petfuse::cli
