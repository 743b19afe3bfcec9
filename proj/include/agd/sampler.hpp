#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agd/dataset.hpp"
#include "agd/denoiser.hpp"
#include "agd/schedule.hpp"

namespace agd::diffusion {

/// x_t = x + sigma * eps with eps ~ N(0, I) drawn from `rng`.
std::pair<Point, Point> forward_perturb(const Point& x, double sigma, Rng& rng);

/// omega * eps_cond - (omega - 1) * eps_uncond, evaluated as
/// eps_cond + (omega - 1) * (eps_cond - eps_uncond). Returns eps_cond exactly
/// when omega = 1 or the branches agree.
Point cfg_combine(const Point& eps_cond, const Point& eps_uncond, double omega);

/// Anything that maps (x_t, sigma, c, omega) rows to epsilon predictions.
/// `nfe()` counts network evaluations per sample actually executed.
class EpsModel {
 public:
  virtual ~EpsModel() = default;

  /// Checks the output is finite per row only via the caller; rows are
  /// independent, so a diverged row never contaminates the others.
  [[nodiscard]] nn::Matrix predict(const nn::Matrix& x, std::span<const double> sigma,
                                   std::span<const int> classes,
                                   std::span<const double> omega) const;

  [[nodiscard]] std::uint64_t nfe() const { return nfe_.get(); }
  void reset_nfe() { nfe_.reset(); }

 protected:
  virtual nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma,
                          std::span<const int> classes, std::span<const double> omega) const = 0;
  void count(std::uint64_t n) const { nfe_.add(n); }

 private:
  NfeCounter nfe_;
};

/// eps_theta(x, sigma, c); omega is ignored.
class ConditionalModel final : public EpsModel {
 public:
  explicit ConditionalModel(const Denoiser& base) : base_(base) {}

 protected:
  nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, std::span<const double> omega) const override;

 private:
  const Denoiser& base_;
};

/// Classifier-free guidance teacher: two base passes per prediction.
class CfgModel final : public EpsModel {
 public:
  explicit CfgModel(const Denoiser& base) : base_(base) {}

 protected:
  nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, std::span<const double> omega) const override;

 private:
  const Denoiser& base_;
};

/// Exact epsilon = -sigma * score from the dataset's closed form. With
/// `guided` set it applies CFG to the exact conditional and marginal scores.
class AnalyticModel final : public EpsModel {
 public:
  AnalyticModel(const ToyDataset& data, bool guided = false) : data_(data), guided_(guided) {}

 protected:
  nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, std::span<const double> omega) const override;

 private:
  const ToyDataset& data_;
  bool guided_;
};

enum class SamplerKind { deterministic_euler, stochastic_em };

SamplerKind parse_sampler_kind(const std::string& s);
std::string to_string(SamplerKind k);

struct SampleSpec {
  std::uint64_t seed = 0;
  int cls = kNullClass;
  double omega = 1.0;
  bool operator==(const SampleSpec&) const = default;
};

struct TrajectoryStep {
  Point x{};
  double sigma = 0.0;
  Point eps{};  // prediction used for this step
};

struct SampleSet {
  nn::Matrix endpoints;  // n x 2
  std::vector<std::vector<TrajectoryStep>> trajectories;  // empty unless requested
  std::vector<bool> diverged;
};

/// Starting point sigma_max * z for a sample seed.
Point initial_noise(std::uint64_t seed, double sigma_max);

/// Integrates all samples in lock-step, one batched model call per step.
/// deterministic_euler:  x_{i+1} = x_i + (s_{i+1} - s_i) eps
/// stochastic_em:        x_{i+1} = x_i + 2 (s_{i+1} - s_i) eps + sqrt(s_i^2 - s_{i+1}^2) z
/// Rows that become non-finite are flagged in `diverged` and frozen.
SampleSet sample_batch(const EpsModel& model, const NoiseSchedule& schedule, SamplerKind kind,
                       std::span<const SampleSpec> specs, bool keep_trajectories = false);

struct SampleResult {
  Point x0{};
  std::vector<TrajectoryStep> trajectory;
};

/// Single-sample convenience; throws SamplerDivergence on non-finite state.
SampleResult sample(const EpsModel& model, const NoiseSchedule& schedule, SamplerKind kind,
                    int cls, double omega, std::uint64_t seed);

}  // namespace agd::diffusion
