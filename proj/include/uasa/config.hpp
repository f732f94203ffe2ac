#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uasa/data.hpp"
#include "uasa/error.hpp"
#include "uasa/trainer.hpp"

namespace uasa {

inline constexpr const char* kVersion = "1.0.0";

// Everything a CLI run needs, flattened into one JSON object. The single seed
// feeds both data generation and training through named streams.
struct ExperimentConfig {
  SynthConfig synth;
  TrainConfig train;
  std::uint64_t seed = 0;

  std::string out_dir = "out";  // UASA_OUT_DIR overrides this
  std::string source;           // input/output dataset paths; empty: <out_dir>/source.bin
  std::string target;
  std::string checkpoint;       // empty: <out_dir>/model.ckpt
  std::string metrics;          // empty: <out_dir>/metrics.csv
  std::string plots_dir;        // empty: <out_dir>/plots
  std::string format = "bin";   // gen output format: bin | csv
  std::size_t seeds = 5;        // ablate: seeds 0..seeds-1 offset by `seed`

  void validate() const;
};

namespace config_detail {

using json = nlohmann::json;

struct Field {
  std::string key;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

inline std::string type_error(const std::string& key, const char* want, const json& v) {
  return "config key '" + key + "' expects " + want + ", got " + v.dump();
}

template <typename T>
T as_unsigned(const std::string& key, const json& v) {
  if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
  throw InvalidConfig(type_error(key, "a non-negative integer", v));
}

inline double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) throw InvalidConfig(type_error(key, "a number", v));
  return v.get<double>();
}

inline bool as_bool(const std::string& key, const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() && (v.get<std::int64_t>() == 0 || v.get<std::int64_t>() == 1)) return v.get<std::int64_t>() == 1;
  throw InvalidConfig(type_error(key, "true or false", v));
}

inline std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw InvalidConfig(type_error(key, "a string", v));
  return v.get<std::string>();
}

template <typename E>
E as_enum(const std::string& key, const json& v, std::initializer_list<std::pair<const char*, E>> opts) {
  const auto s = as_string(key, v);
  std::string names;
  for (const auto& [n, e] : opts) {
    if (s == n) return e;
    names += names.empty() ? n : std::string("|") + n;
  }
  throw InvalidConfig("config key '" + key + "' must be one of " + names + ", got '" + s + "'");
}

template <typename E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> opts) {
  for (const auto& [n, x] : opts)
    if (x == e) return n;
  return "?";
}

inline std::vector<std::size_t> as_size_list(const std::string& key, const json& v) {
  std::vector<std::size_t> out;
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(as_unsigned<std::size_t>(key, x));
    return out;
  }
  if (v.is_number()) return {as_unsigned<std::size_t>(key, v)};
  // "32,16" from a key=value override; "" is the empty list
  std::stringstream ss(as_string(key, v));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const long long n = std::stoll(item, &pos);
      if (pos != item.size() || n < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(n));
    } catch (const std::exception&) {
      throw InvalidConfig(type_error(key, "a list of non-negative integers", v));
    }
  }
  return out;
}

#define UASA_UINT(name, member) \
  Field{name, [](const ExperimentConfig& c) { return json(c.member); }, \
        [](ExperimentConfig& c, const json& v) { c.member = as_unsigned<decltype(c.member)>(name, v); }}
#define UASA_REAL(name, member) \
  Field{name, [](const ExperimentConfig& c) { return json(c.member); }, \
        [](ExperimentConfig& c, const json& v) { c.member = as_double(name, v); }}
#define UASA_BOOL(name, member) \
  Field{name, [](const ExperimentConfig& c) { return json(c.member); }, \
        [](ExperimentConfig& c, const json& v) { c.member = as_bool(name, v); }}
#define UASA_STR(name, member) \
  Field{name, [](const ExperimentConfig& c) { return json(c.member); }, \
        [](ExperimentConfig& c, const json& v) { c.member = as_string(name, v); }}
#define UASA_ENUM(name, member, ...) \
  Field{name, [](const ExperimentConfig& c) { return json(enum_name<decltype(c.member)>(c.member, {__VA_ARGS__})); }, \
        [](ExperimentConfig& c, const json& v) { c.member = as_enum<decltype(c.member)>(name, v, {__VA_ARGS__}); }}

inline const std::vector<Field>& fields() {
  using TM = ThresholdMode;
  using TR = ThresholdRule;
  using SM = SeparationMode;
  using PL = PairLossKind;
  using PN = PdaNormalization;
  using AC = Activation;
  static const std::vector<Field> f = {
      UASA_UINT("seed", seed),
      UASA_UINT("num_id_classes", synth.num_id_classes),
      UASA_UINT("num_ood_classes", synth.num_ood_classes),
      UASA_UINT("raw_dim", synth.raw_dim),
      UASA_UINT("max_class_size", synth.max_class_size),
      UASA_REAL("imbalance", synth.imbalance),
      UASA_UINT("target_size", synth.target_size),
      UASA_REAL("radius", synth.radius),
      UASA_REAL("class_sigma", synth.class_sigma),
      UASA_REAL("rotation_deg", synth.rotation_deg),
      UASA_REAL("translation", synth.translation),
      UASA_REAL("noise_sigma", synth.noise_sigma),
      UASA_REAL("lambda_pda", train.lambda_pda),
      UASA_REAL("lambda_atg", train.lambda_atg),
      UASA_REAL("lambda_uc", train.lambda_uc),
      UASA_REAL("sigma", train.sigma),
      UASA_REAL("alpha", train.alpha),
      UASA_REAL("delta", train.delta),
      UASA_REAL("cluster_factor", train.cluster_factor),
      UASA_UINT("source_batch", train.source_batch),
      UASA_UINT("target_batch", train.target_batch),
      UASA_REAL("learning_rate", train.learning_rate),
      UASA_REAL("momentum", train.momentum),
      UASA_UINT("epochs", train.epochs),
      UASA_UINT("warmup_epochs", train.warmup_epochs),
      UASA_BOOL("use_lpb", train.use_lpb),
      UASA_BOOL("use_pda", train.use_pda),
      UASA_BOOL("use_atg", train.use_atg),
      UASA_BOOL("use_uc", train.use_uc),
      UASA_ENUM("threshold_mode", train.threshold_mode, {"adaptive", TM::adaptive}, {"fixed", TM::fixed}),
      UASA_ENUM("threshold_rule", train.threshold_rule, {"corrected", TR::corrected}, {"literal", TR::literal}),
      UASA_ENUM("separation", train.separation, {"literal", SM::literal}, {"repel", SM::repel}),
      UASA_ENUM("pair_loss", train.pair_loss, {"kl", PL::kl}, {"ce", PL::ce}),
      UASA_ENUM("pda_normalization", train.pda_normalization, {"literal", PN::literal}, {"batch", PN::batch}),
      Field{"hidden_layers", [](const ExperimentConfig& c) { return json(c.train.hidden_layers); },
            [](ExperimentConfig& c, const json& v) { c.train.hidden_layers = as_size_list("hidden_layers", v); }},
      UASA_UINT("feature_dim", train.feature_dim),
      UASA_ENUM("activation", train.activation, {"relu", AC::relu}, {"tanh", AC::tanh}),
      UASA_BOOL("freeze_encoder", train.freeze_encoder),
      UASA_STR("out_dir", out_dir),
      UASA_STR("source", source),
      UASA_STR("target", target),
      UASA_STR("checkpoint", checkpoint),
      UASA_STR("metrics", metrics),
      UASA_STR("plots_dir", plots_dir),
      UASA_STR("format", format),
      UASA_UINT("seeds", seeds),
  };
  return f;
}

#undef UASA_UINT
#undef UASA_REAL
#undef UASA_BOOL
#undef UASA_STR
#undef UASA_ENUM

inline const Field* find(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : config_detail::fields()) out.push_back(f.key);
  return out;
}

inline void ExperimentConfig::validate() const {
  synth.validate();
  train.validate();
  if (format != "bin" && format != "csv") throw InvalidConfig("format must be bin or csv, got '" + format + "'");
  if (seeds == 0) throw InvalidConfig("seeds must be positive");
  if (train.feature_dim == 0 && !train.hidden_layers.empty())
    throw InvalidConfig("feature_dim 0 selects the identity encoder and needs hidden_layers = []");
  if (train.feature_dim != 0)
    for (auto h : train.hidden_layers)
      if (h == 0) throw InvalidConfig("hidden layer widths must be positive");
}

inline std::string unknown_key_message(const std::string& key) {
  std::string msg = "unknown config key '" + key + "'; valid keys:";
  for (const auto& k : config_keys()) msg += " " + k;
  return msg;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const nlohmann::json& value) {
  const auto* f = config_detail::find(key);
  if (!f) throw InvalidConfig(unknown_key_message(key));
  f->set(c, value);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_detail::fields()) j[f.key] = f.get(c);
  return j;
}

inline void apply_json(ExperimentConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfig("config must be a flat JSON object");
  for (const auto& [k, v] : j.items()) set_config_value(c, k, v);
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  apply_json(c, j);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return config_from_json(j);
}

// "key=value"; the value is read as JSON when it parses (numbers, booleans,
// arrays), otherwise as a bare string.
inline void apply_override(ExperimentConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidConfig("override '" + kv + "' is not key=value");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
  if (v.is_discarded()) v = raw;
  set_config_value(c, key, v);
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
}

}  // namespace uasa
