// SPDX-License-Identifier: Apache-2.0
#include "petfuse/config.hpp"

#include <fstream>

#include "petfuse/error.hpp"

namespace petfuse {

using nlohmann::json;

namespace {

json encoder_json(const EncoderSpec& e) {
  return {{"kind", to_string(e.kind)}, {"output_dim", e.output_dim}, {"depth", e.depth},
          {"width", e.width},          {"mlp_ratio", e.mlp_ratio},   {"input_dim", e.input_dim},
          {"patches", e.patches},      {"max_len", e.max_len}};
}

EncoderSpec encoder_from(const json& j, EncoderSpec e) {
  e.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  e.output_dim = j.at("output_dim").get<std::size_t>();
  e.depth = j.at("depth").get<std::size_t>();
  e.width = j.at("width").get<std::size_t>();
  e.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  e.input_dim = j.at("input_dim").get<std::size_t>();
  e.patches = j.at("patches").get<std::size_t>();
  e.max_len = j.at("max_len").get<std::size_t>();
  return e;
}

std::string join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

bool compatible(const json& base, const json& value) {
  if (base.is_number_unsigned()) return value.is_number_unsigned();
  if (base.is_number_integer()) return value.is_number_integer();
  if (base.is_number()) return value.is_number();
  return base.type() == value.type();
}

std::string type_name(const json& base) {
  if (base.is_number_unsigned()) return "non-negative integer";
  if (base.is_number_integer()) return "integer";
  return base.type_name();
}

}  // namespace

void AppConfig::sync_seeds() {
  train.seed = seed;
  split.seed = seed;
  audit.seed = seed;
}

void AppConfig::validate() const {
  train.validate();
  split.validate();
  model.fusion.validate();
  if (ece_bins == 0) throw ConfigError("ece_bins must be positive");
  if (audit.steps == 0 || !(audit.lr > 0.0)) throw ConfigError("audit needs positive steps and lr");
  if (pet.policy == PetPolicy::lora && pet.lora.rank == 0) throw ConfigError("pet.lora.rank must be >= 1");
  if (pet.policy == PetPolicy::adapter && pet.adapter.bottleneck == 0) {
    throw ConfigError("pet.adapter.bottleneck must be >= 1");
  }
}

json to_json(const AppConfig& c) {
  const auto& m = c.model;
  return {
      {"seed", c.seed},
      {"model",
       {{"architecture", to_string(m.architecture)},
        {"encoder_seed", m.encoder_seed},
        {"declared_total_params", m.declared_total_params},
        {"normalize_features", m.normalize_features},
        {"vision", encoder_json(m.vision)},
        {"text", encoder_json(m.text)},
        {"fusion",
         {{"vision_in", m.fusion.vision_in},
          {"text_in", m.fusion.text_in},
          {"shared_dim", m.fusion.shared_dim},
          {"head_hidden", m.fusion.head_hidden},
          {"num_labels", m.fusion.num_labels},
          {"dropout", m.fusion.dropout}}},
        {"vision_head",
         {{"vision_in", m.vision_head.vision_in},
          {"hidden", m.vision_head.hidden},
          {"num_labels", m.vision_head.num_labels},
          {"dropout", m.vision_head.dropout}}}}},
      {"pet",
       {{"policy", to_string(c.pet.policy)},
        {"lora", {{"rank", c.pet.lora.rank}, {"alpha", c.pet.lora.alpha}, {"targets", c.pet.lora.targets}}},
        {"adapter", {{"bottleneck", c.pet.adapter.bottleneck}}},
        {"layers", c.pet.layers}}},
      {"train",
       {{"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"batch", c.train.batch},
        {"accumulation", c.train.accumulation},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"clip_norm", c.train.clip_norm},
        {"warmup_fraction", c.train.warmup_fraction},
        {"pos_weight", c.train.pos_weight}}},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
      {"audit", {{"lr", c.audit.lr}, {"weight_decay", c.audit.weight_decay}, {"steps", c.audit.steps}}},
      {"ece_bins", c.ece_bins},
  };
}

AppConfig app_config_from_json(const json& j) {
  json tree = to_json(AppConfig{});
  merge_strict(tree, j);
  AppConfig c;
  try {
    c.seed = tree.at("seed").get<std::uint64_t>();
    const auto& m = tree.at("model");
    c.model.architecture = architecture_from_string(m.at("architecture").get<std::string>());
    c.model.encoder_seed = m.at("encoder_seed").get<std::uint64_t>();
    c.model.declared_total_params = m.at("declared_total_params").get<std::uint64_t>();
    c.model.normalize_features = m.at("normalize_features").get<bool>();
    c.model.vision = encoder_from(m.at("vision"), c.model.vision);
    c.model.text = encoder_from(m.at("text"), c.model.text);
    const auto& f = m.at("fusion");
    c.model.fusion.vision_in = f.at("vision_in").get<std::size_t>();
    c.model.fusion.text_in = f.at("text_in").get<std::size_t>();
    c.model.fusion.shared_dim = f.at("shared_dim").get<std::size_t>();
    c.model.fusion.head_hidden = f.at("head_hidden").get<std::size_t>();
    c.model.fusion.num_labels = f.at("num_labels").get<std::size_t>();
    c.model.fusion.dropout = f.at("dropout").get<double>();
    const auto& vh = m.at("vision_head");
    c.model.vision_head.vision_in = vh.at("vision_in").get<std::size_t>();
    c.model.vision_head.hidden = vh.at("hidden").get<std::size_t>();
    c.model.vision_head.num_labels = vh.at("num_labels").get<std::size_t>();
    c.model.vision_head.dropout = vh.at("dropout").get<double>();
    const auto& p = tree.at("pet");
    c.pet.policy = pet_policy_from_string(p.at("policy").get<std::string>());
    c.pet.lora.rank = p.at("lora").at("rank").get<std::size_t>();
    c.pet.lora.alpha = p.at("lora").at("alpha").get<double>();
    c.pet.lora.targets = p.at("lora").at("targets").get<std::vector<std::string>>();
    c.pet.adapter.bottleneck = p.at("adapter").at("bottleneck").get<std::size_t>();
    c.pet.layers = p.at("layers").get<std::vector<std::size_t>>();
    const auto& t = tree.at("train");
    c.train.lr = t.at("lr").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.batch = t.at("batch").get<std::size_t>();
    c.train.accumulation = t.at("accumulation").get<std::size_t>();
    c.train.max_epochs = t.at("max_epochs").get<std::size_t>();
    c.train.patience = t.at("patience").get<std::size_t>();
    c.train.clip_norm = t.at("clip_norm").get<double>();
    c.train.warmup_fraction = t.at("warmup_fraction").get<double>();
    c.train.pos_weight = t.at("pos_weight").get<bool>();
    const auto& s = tree.at("split");
    c.split.train = s.at("train").get<double>();
    c.split.val = s.at("val").get<double>();
    c.split.test = s.at("test").get<double>();
    const auto& a = tree.at("audit");
    c.audit.lr = a.at("lr").get<double>();
    c.audit.weight_decay = a.at("weight_decay").get<double>();
    c.audit.steps = a.at("steps").get<std::size_t>();
    c.ece_bins = tree.at("ece_bins").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  for (const auto& target : c.pet.lora.targets) {
    if (target != "q" && target != "k" && target != "v" && target != "out") {
      throw ConfigError("pet.lora.targets: unknown projection '" + target + "'");
    }
  }
  c.sync_seeds();
  c.validate();
  return c;
}

void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError((where.empty() ? "config" : where) + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = join(where, key);
    auto it = base.find(key);
    if (it == base.end()) throw ConfigError("unknown config key: " + path);
    if (it->is_object()) {
      merge_strict(*it, value, path);
    } else if (it->is_array()) {
      if (!value.is_array()) throw ConfigError(path + " must be an array");
      *it = value;
    } else {
      if (!compatible(*it, value)) throw ConfigError(path + " must be a " + type_name(*it));
      // Keep floats floats so the echoed config is stable across inputs like 1 vs 1.0.
      *it = it->is_number_float() ? json(value.get<double>()) : value;
    }
  }
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ConfigError("empty path segment in override: " + assignment);
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_strict(tree, patch);
}

AppConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json tree = to_json(AppConfig{});
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw InputError("cannot open config file: " + file.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + file.string());
    merge_strict(tree, j);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  return app_config_from_json(tree);
}

void echo_config(const AppConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw InputError("cannot write " + (dir / "config.json").string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace petfuse
