#include "agd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "agd/errors.hpp"
#include "agd/hash.hpp"

namespace agd::config {

namespace {

enum class Type { integer, real, boolean, choice, real_list };
enum class Bound { none, nonneg, positive, ge_one, unit_open };

struct Key {
  const char* name;
  Type type;
  const char* fallback;
  Bound bound = Bound::none;
  std::vector<std::string> choices = {};
};

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = {
      {"seed", Type::integer, "0", Bound::nonneg},
      {"data.classes", Type::integer, "8", Bound::positive},
      {"data.radius", Type::real, "3", Bound::positive},
      {"data.spread", Type::real, "0.8", Bound::nonneg},
      {"data.std", Type::real, "0.3", Bound::positive},
      {"schedule.sigma_min", Type::real, "0.01", Bound::positive},
      {"schedule.sigma_max", Type::real, "10", Bound::positive},
      {"schedule.rho", Type::real, "7", Bound::positive},
      {"schedule.steps", Type::integer, "64", Bound::positive},
      {"model.embed_dim", Type::integer, "16", Bound::positive},
      {"model.hidden", Type::integer, "64", Bound::positive},
      {"model.depth", Type::integer, "3", Bound::positive},
      {"model.time_frequencies", Type::integer, "8", Bound::positive},
      {"model.time_scale", Type::real, "0.5", Bound::positive},
      {"model.sigma_data", Type::real, "2", Bound::positive},
      {"model.activation", Type::choice, "relu", Bound::none, {"relu", "silu"}},
      {"base.steps", Type::integer, "4000", Bound::positive},
      {"base.batch", Type::integer, "256", Bound::positive},
      {"base.lr", Type::real, "0.002", Bound::positive},
      {"base.cond_dropout", Type::real, "0.1", Bound::nonneg},
      {"base.grad_clip", Type::real, "10", Bound::none},
      {"trajectories.count", Type::integer, "512", Bound::positive},
      {"trajectories.omega_lo", Type::real, "1", Bound::ge_one},
      {"trajectories.omega_hi", Type::real, "6", Bound::ge_one},
      {"trajectories.sampler", Type::choice, "deterministic_euler", Bound::none,
       {"deterministic_euler", "stochastic_em"}},
      {"trajectories.source", Type::choice, "guided", Bound::none, {"guided", "diffusion"}},
      {"trajectories.stratified", Type::boolean, "false"},
      {"adapter.arch", Type::choice, "offset", Bound::none,
       {"cross_attention", "offset", "gating", "positional"}},
      {"adapter.width", Type::integer, "4", Bound::positive},
      {"adapter.tokens", Type::integer, "4", Bound::positive},
      {"adapter.mlp_hidden", Type::integer, "4", Bound::positive},
      {"adapter.init", Type::choice, "xavier", Bound::none, {"xavier", "zero"}},
      {"adapter.dropout", Type::real, "0", Bound::unit_open},
      {"adapter.omega_frequencies", Type::integer, "4", Bound::positive},
      {"adapter.omega_scale", Type::real, "0.2", Bound::positive},
      {"adapter.position_frequencies", Type::integer, "2", Bound::positive},
      {"adapter.activation", Type::choice, "silu", Bound::none, {"relu", "silu"}},
      {"distill.steps", Type::integer, "5000", Bound::nonneg},
      {"distill.batch", Type::integer, "64", Bound::positive},
      {"distill.peak_lr", Type::real, "0.003", Bound::positive},
      {"distill.loss", Type::choice, "l2", Bound::none, {"l2", "l1", "weighted_l2"}},
      {"distill.lambda_power", Type::real, "-2"},
      {"distill.mode", Type::choice, "agd_adapters", Bound::none,
       {"agd_adapters", "gd_full_finetune"}},
      {"distill.grad_clip", Type::real, "10"},
      {"distill.holdout_modulus", Type::integer, "10", Bound::positive},
      {"distill.gd_omega_frequencies", Type::integer, "4", Bound::positive},
      {"distill.gd_omega_scale", Type::real, "0.2", Bound::positive},
      {"eval.omegas", Type::real_list, "1,2,4,6,9"},
      {"eval.report_omega", Type::real, "4", Bound::ge_one},
      {"eval.transfer_omega", Type::real, "4", Bound::ge_one},
      {"eval.endpoint_seeds", Type::integer, "512", Bound::positive},
      {"eval.gen_samples", Type::integer, "2048", Bound::positive},
      {"eval.real_samples", Type::integer, "4096", Bound::positive},
      {"eval.knn_k", Type::integer, "5", Bound::positive},
      {"eval.sampler", Type::choice, "deterministic_euler", Bound::none,
       {"deterministic_euler", "stochastic_em"}},
      {"eval.divergence_count", Type::integer, "512", Bound::positive},
      {"eval.divergence_omega_lo", Type::real, "4", Bound::ge_one},
      {"eval.divergence_omega_hi", Type::real, "6", Bound::ge_one},
  };
  return keys;
}

// Selects which model a distill run emits; AGD and GD artifacts of one
// experiment share a hash.
constexpr const char* kUnhashedKey = "distill.mode";

const Key* find_key(const std::string& name) {
  for (const auto& k : schema()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) {
    throw ConfigError(key + ": '" + text + "' is not a finite number");
  }
  return v;
}

std::int64_t parse_integer(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": '" + text + "' is not an integer");
  }
  return v;
}

void check_bound(const Key& k, double v) {
  const std::string key = k.name;
  switch (k.bound) {
    case Bound::none: break;
    case Bound::nonneg:
      if (v < 0) throw ConfigError(key + " must be >= 0");
      break;
    case Bound::positive:
      if (v <= 0) throw ConfigError(key + " must be > 0");
      break;
    case Bound::ge_one:
      if (v < 1) throw ConfigError(key + " must be >= 1");
      break;
    case Bound::unit_open:
      if (v < 0 || v >= 1) throw ConfigError(key + " must lie in [0, 1)");
      break;
  }
}

/// Validates `text` for key `k` and returns its canonical spelling.
std::string canonical(const Key& k, const std::string& text) {
  const std::string key = k.name;
  switch (k.type) {
    case Type::integer: {
      const std::int64_t v = parse_integer(key, text);
      check_bound(k, static_cast<double>(v));
      return std::to_string(v);
    }
    case Type::real: {
      const double v = parse_real(key, text);
      check_bound(k, v);
      return fmt::format("{}", v);
    }
    case Type::boolean: {
      const std::string s = trim(text);
      if (s == "true" || s == "1") return "true";
      if (s == "false" || s == "0") return "false";
      throw ConfigError(key + ": '" + text + "' is not a boolean");
    }
    case Type::choice: {
      const std::string s = trim(text);
      for (const auto& c : k.choices) {
        if (s == c) return s;
      }
      std::string allowed;
      for (const auto& c : k.choices) allowed += (allowed.empty() ? "" : ", ") + c;
      throw ConfigError(key + ": '" + text + "' is not one of {" + allowed + "}");
    }
    case Type::real_list: {
      std::string out;
      std::size_t start = 0;
      const std::string s = trim(text);
      if (s.empty()) throw ConfigError(key + " must list at least one value");
      while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string item =
            s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        const double v = parse_real(key, item);
        if (v < 1) throw ConfigError(key + " values must be >= 1");
        out += (out.empty() ? "" : ",") + fmt::format("{}", v);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      return out;
    }
  }
  return text;
}

void flatten(const YAML::Node& node, const std::string& prefix, Config& cfg) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string name = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? name : prefix + "." + name, cfg);
    }
    return;
  }
  if (prefix.empty()) throw ConfigError("config root must be a mapping");
  if (node.IsSequence()) {
    std::string joined;
    for (const auto& item : node) {
      if (!item.IsScalar()) throw ConfigError(prefix + ": list items must be scalars");
      joined += (joined.empty() ? "" : ",") + item.as<std::string>();
    }
    cfg.set(prefix, joined);
    return;
  }
  if (!node.IsScalar()) throw ConfigError(prefix + ": value is missing");
  cfg.set(prefix, node.as<std::string>());
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& k : schema()) c.values_[k.name] = canonical(k, k.fallback);
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file '" + path.string() + "' does not exist");
  }
  Config c = defaults();
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
  if (root.IsNull()) return c;
  try {
    flatten(root, "", c);
  } catch (const YAML::Exception& e) {
    throw ConfigError("invalid value in '" + path.string() + "': " + e.what());
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (k == nullptr) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = canonical(*k, value);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& Config::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t Config::get_int(const std::string& key) const { return parse_integer(key, raw(key)); }

double Config::get_double(const std::string& key) const { return parse_real(key, raw(key)); }

bool Config::get_bool(const std::string& key) const { return raw(key) == "true"; }

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  const std::string& s = raw(key);
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(parse_real(key, s.substr(start, comma == std::string::npos
                                                     ? std::string::npos
                                                     : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t Config::hash() const {
  Fnv1a h;
  for (const auto& [k, v] : values_) {
    if (k == kUnhashedKey) continue;
    h.update(k);
    h.update("=");
    h.update(v);
    h.update("\n");
  }
  return h.digest();
}

std::string Config::hash_hex() const { return fmt::format("{:016x}", hash()); }

std::string Config::to_yaml() const {
  std::string out;
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? k : k.substr(dot + 1);
    const Key* key = find_key(k);
    const std::string shown = key->type == Type::real_list ? "[" + v + "]" : v;
    if (sec.empty()) {
      out += leaf + ": " + shown + "\n";
      continue;
    }
    if (sec != section) {
      out += sec + ":\n";
      section = sec;
    }
    out += "  " + leaf + ": " + shown + "\n";
  }
  return out;
}

Experiment to_experiment(const Config& c) {
  Experiment e;
  auto u = [&](const char* key) { return static_cast<std::size_t>(c.get_int(key)); };
  e.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  e.config_hash = c.hash();

  e.data.classes = static_cast<int>(c.get_int("data.classes"));
  e.data.radius = c.get_double("data.radius");
  e.data.spread = c.get_double("data.spread");
  e.data.std = c.get_double("data.std");

  e.schedule.sigma_min = c.get_double("schedule.sigma_min");
  e.schedule.sigma_max = c.get_double("schedule.sigma_max");
  e.schedule.rho = c.get_double("schedule.rho");
  e.schedule.steps = u("schedule.steps");
  if (e.schedule.sigma_min >= e.schedule.sigma_max) {
    throw ConfigError("schedule.sigma_min must be below schedule.sigma_max");
  }

  e.model.num_classes = e.data.classes;
  e.model.embed_dim = u("model.embed_dim");
  e.model.hidden = u("model.hidden");
  e.model.depth = u("model.depth");
  e.model.time_frequencies = u("model.time_frequencies");
  e.model.time_scale = c.get_double("model.time_scale");
  e.model.sigma_data = c.get_double("model.sigma_data");
  e.model.activation = nn::parse_activation(c.raw("model.activation"));

  e.base.steps = u("base.steps");
  e.base.batch = u("base.batch");
  e.base.lr = c.get_double("base.lr");
  e.base.cond_dropout = c.get_double("base.cond_dropout");
  if (e.base.cond_dropout > 1.0) throw ConfigError("base.cond_dropout must lie in [0, 1]");
  e.base.grad_clip = c.get_double("base.grad_clip");
  e.base.seed = e.seed;

  e.trajectories.count = u("trajectories.count");
  e.trajectories.omega_lo = c.get_double("trajectories.omega_lo");
  e.trajectories.omega_hi = c.get_double("trajectories.omega_hi");
  if (e.trajectories.omega_hi < e.trajectories.omega_lo) {
    throw ConfigError("trajectories.omega_hi must be >= trajectories.omega_lo");
  }
  e.trajectories.kind = diffusion::parse_sampler_kind(c.raw("trajectories.sampler"));
  e.trajectories.stratified = c.get_bool("trajectories.stratified");
  e.trajectories.seed = e.seed + 1;
  e.trajectories.config_hash = e.config_hash;
  e.source = store::parse_source(c.raw("trajectories.source"));

  e.adapter.arch = adapters::parse_architecture(c.raw("adapter.arch"));
  e.adapter.width = u("adapter.width");
  e.adapter.tokens = u("adapter.tokens");
  e.adapter.mlp_hidden = u("adapter.mlp_hidden");
  e.adapter.init = adapters::parse_init(c.raw("adapter.init"));
  e.adapter.dropout = c.get_double("adapter.dropout");
  e.adapter.omega_frequencies = u("adapter.omega_frequencies");
  e.adapter.omega_scale = c.get_double("adapter.omega_scale");
  e.adapter.position_frequencies = u("adapter.position_frequencies");
  e.adapter.activation = nn::parse_activation(c.raw("adapter.activation"));
  e.adapter.seed = e.seed + 2;
  if (e.model.hidden % e.adapter.tokens != 0) {
    throw ConfigError("adapter.tokens must divide model.hidden");
  }

  e.distill.steps = u("distill.steps");
  e.distill.batch = u("distill.batch");
  e.distill.peak_lr = c.get_double("distill.peak_lr");
  e.distill.loss.kind = distill::parse_loss(c.raw("distill.loss"));
  e.distill.loss.lambda_power = c.get_double("distill.lambda_power");
  e.distill.mode = distill::parse_mode(c.raw("distill.mode"));
  e.distill.grad_clip = c.get_double("distill.grad_clip");
  e.distill.seed = e.seed + 3;
  e.holdout_modulus = static_cast<std::uint64_t>(c.get_int("distill.holdout_modulus"));
  e.gd_pathway.frequencies = u("distill.gd_omega_frequencies");
  e.gd_pathway.scale = c.get_double("distill.gd_omega_scale");
  e.gd_pathway.seed = e.seed + 4;

  e.eval.omegas = c.get_doubles("eval.omegas");
  e.eval.report_omega = c.get_double("eval.report_omega");
  e.eval.transfer_omega = c.get_double("eval.transfer_omega");
  e.eval.endpoint_seeds = u("eval.endpoint_seeds");
  e.eval.options.gen_samples = u("eval.gen_samples");
  e.eval.options.real_samples = u("eval.real_samples");
  e.eval.options.knn_k = u("eval.knn_k");
  e.eval.options.kind = diffusion::parse_sampler_kind(c.raw("eval.sampler"));
  e.eval.options.seed = e.seed + 5;
  e.eval.divergence_count = u("eval.divergence_count");
  e.eval.divergence_omega_lo = c.get_double("eval.divergence_omega_lo");
  e.eval.divergence_omega_hi = c.get_double("eval.divergence_omega_hi");
  if (e.eval.options.knn_k >= e.eval.options.gen_samples ||
      e.eval.options.knn_k >= e.eval.options.real_samples) {
    throw ConfigError("eval.knn_k must be below both sample budgets");
  }
  return e;
}

}  // namespace agd::config
