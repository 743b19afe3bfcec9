#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "agd/dataset.hpp"
#include "agd/metrics.hpp"
#include "agd/sampler.hpp"
#include "agd/schedule.hpp"

namespace agd::eval {

/// Specs for `n` paired samples: seeds derived from `seed`, classes cycling 0..K-1.
std::vector<diffusion::SampleSpec> paired_specs(std::size_t n, int num_classes, double omega,
                                                std::uint64_t seed);

/// Mean squared endpoint distance between two models sampled from identical
/// starting noise. Non-finite endpoints count as infinite distance.
double endpoint_mse(const diffusion::EpsModel& a, const diffusion::EpsModel& b,
                    const diffusion::NoiseSchedule& schedule, diffusion::SamplerKind kind,
                    std::span<const diffusion::SampleSpec> specs);
double endpoint_mse(const diffusion::EpsModel& a, const diffusion::EpsModel& b,
                    const diffusion::NoiseSchedule& schedule, diffusion::SamplerKind kind,
                    std::span<const std::uint64_t> seeds, int cls, double omega);

struct EvalOptions {
  std::size_t gen_samples = 2048;
  std::size_t real_samples = 4096;
  std::size_t knn_k = 5;
  std::uint64_t seed = 0;
  diffusion::SamplerKind kind = diffusion::SamplerKind::deterministic_euler;
};

/// Real points with classes cycling 0..K-1, matching paired_specs.
nn::Matrix real_samples(const diffusion::ToyDataset& data, std::size_t n, std::uint64_t seed);

struct Method {
  std::string name;
  const diffusion::EpsModel* model = nullptr;
  double param_ratio = 0.0;
};

inline const std::string kTeacher = "cfg_teacher";

struct SweepRow {
  double omega = 1.0;
  std::string method;
  double endpoint_mse_vs_teacher = 0.0;
  double energy_distance = 0.0;
  double knn_precision = 0.0;
  double knn_recall = 0.0;
  std::uint64_t nfe_total = 0;
  double param_ratio = 0.0;

  bool operator==(const SweepRow&) const = default;
};

/// For every omega and method: sample gen_samples points, compare them with
/// the teacher's paired samples and with real data. Requires a method named
/// cfg_teacher.
std::vector<SweepRow> guidance_sweep(std::span<const Method> methods,
                                     std::span<const double> omegas,
                                     const diffusion::ToyDataset& data,
                                     const diffusion::NoiseSchedule& schedule,
                                     const EvalOptions& opt);

struct TransferReport {
  double omega = 1.0;
  double teacher_deterministic = 0.0;  // energy distances to data
  double teacher_stochastic = 0.0;
  double agd_deterministic = 0.0;
  double agd_stochastic = 0.0;
  std::uint64_t teacher_nfe_stochastic = 0;
  std::uint64_t agd_nfe_stochastic = 0;

  bool operator==(const TransferReport&) const = default;
};

/// Samples AGD and the CFG teacher with both samplers at `omega`.
TransferReport scheduler_transfer(const diffusion::EpsModel& agd,
                                  const diffusion::EpsModel& teacher,
                                  const diffusion::ToyDataset& data,
                                  const diffusion::NoiseSchedule& schedule, double omega,
                                  const EvalOptions& opt);

struct EvalReport {
  std::map<std::string, std::string> metadata;
  std::vector<SweepRow> summary;  // one row per method at the report omega
  std::vector<SweepRow> sweep;
  std::vector<TransferReport> transfer;
  std::vector<double> divergence;  // per-step guided vs unguided energy distance

  bool operator==(const EvalReport&) const = default;

  /// Lossless CSV: metadata as '# key=value' lines, then one table.
  [[nodiscard]] std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);

  /// Column order of sweep.csv.
  static std::string sweep_header();
  [[nodiscard]] std::string sweep_csv() const;

  /// Plain-text summary with 6 significant digits and no timings.
  [[nodiscard]] std::string report_text() const;
};

}  // namespace agd::eval
