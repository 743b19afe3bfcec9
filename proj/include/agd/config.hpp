#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "agd/adapters.hpp"
#include "agd/dataset.hpp"
#include "agd/denoiser.hpp"
#include "agd/distill.hpp"
#include "agd/evaluation.hpp"
#include "agd/schedule.hpp"
#include "agd/train_base.hpp"
#include "agd/trajectory_store.hpp"

namespace agd::config {

/// Flat view of the experiment configuration: every key is a dotted path
/// ("distill.steps") known to the schema, every value its canonical text.
class Config {
 public:
  /// All keys at their defaults.
  static Config defaults();
  /// Defaults overlaid with a YAML file. Throws ConfigError on a missing or
  /// malformed file, unknown keys or invalid values.
  static Config load(const std::filesystem::path& path);

  /// Sets one key; throws ConfigError on unknown keys or invalid values.
  void set(const std::string& key, const std::string& value);
  /// Parses "key=value".
  void apply_override(const std::string& assignment);

  [[nodiscard]] const std::string& raw(const std::string& key) const;
  [[nodiscard]] std::int64_t get_int(const std::string& key) const;
  [[nodiscard]] double get_double(const std::string& key) const;
  [[nodiscard]] bool get_bool(const std::string& key) const;
  [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const;

  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }
  /// FNV-1a over the sorted "key=value" lines, excluding distill.mode.
  [[nodiscard]] std::uint64_t hash() const;
  [[nodiscard]] std::string hash_hex() const;
  /// Nested YAML that loads back to an identical Config.
  [[nodiscard]] std::string to_yaml() const;

 private:
  std::map<std::string, std::string> values_;
};

struct EvalSpec {
  std::vector<double> omegas;
  double report_omega = 4.0;
  double transfer_omega = 4.0;
  std::size_t endpoint_seeds = 512;
  eval::EvalOptions options;
  double divergence_omega_lo = 4.0;
  double divergence_omega_hi = 6.0;
  std::size_t divergence_count = 512;
};

/// Typed view used by the pipeline. Stage seeds are derived from the global seed.
struct Experiment {
  std::uint64_t seed = 0;
  diffusion::RingSpec data;
  diffusion::ScheduleConfig schedule;
  diffusion::DenoiserConfig model;
  diffusion::BaseTrainConfig base;
  store::GenerationOptions trajectories;
  store::Source source = store::Source::guided;
  adapters::AdapterConfig adapter;
  distill::DistillConfig distill;
  distill::OmegaPathwayConfig gd_pathway;
  std::uint64_t holdout_modulus = 10;
  EvalSpec eval;
  std::uint64_t config_hash = 0;
};

Experiment to_experiment(const Config& cfg);

}  // namespace agd::config
