#include "agd/sampler.hpp"

#include <cmath>

#include "agd/errors.hpp"

namespace agd::diffusion {

using nn::Matrix;

namespace {
constexpr std::uint64_t kInitStream = 0x1717;
constexpr std::uint64_t kStepStream = 0x5eed;
}  // namespace

std::pair<Point, Point> forward_perturb(const Point& x, double sigma, Rng& rng) {
  if (sigma < 0.0) throw InputError("forward_perturb: sigma must be >= 0");
  const Point eps{rng.normal(), rng.normal()};
  return {{x[0] + sigma * eps[0], x[1] + sigma * eps[1]}, eps};
}

Point cfg_combine(const Point& eps_cond, const Point& eps_uncond, double omega) {
  const double g = omega - 1.0;
  return {eps_cond[0] + g * (eps_cond[0] - eps_uncond[0]),
          eps_cond[1] + g * (eps_cond[1] - eps_uncond[1])};
}

Matrix EpsModel::predict(const Matrix& x, std::span<const double> sigma,
                         std::span<const int> classes, std::span<const double> omega) const {
  if (x.cols() != kDataDim || sigma.size() != x.rows() || classes.size() != x.rows() ||
      omega.size() != x.rows()) {
    throw DimensionError("predict: x, sigma, classes and omega must have one entry per row");
  }
  return eval(x, sigma, classes, omega);
}

Matrix ConditionalModel::eval(const Matrix& x, std::span<const double> sigma,
                              std::span<const int> classes, std::span<const double>) const {
  count(x.rows());
  return base_.predict(x, sigma, classes);
}

Matrix CfgModel::eval(const Matrix& x, std::span<const double> sigma,
                      std::span<const int> classes, std::span<const double> omega) const {
  const Matrix cond = base_.predict(x, sigma, classes);
  count(x.rows());
  const std::vector<int> nulls(x.rows(), kNullClass);
  const Matrix uncond = base_.predict(x, sigma, nulls);
  count(x.rows());
  Matrix out(x.rows(), kDataDim);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Point e = cfg_combine({cond(r, 0), cond(r, 1)}, {uncond(r, 0), uncond(r, 1)}, omega[r]);
    out(r, 0) = e[0];
    out(r, 1) = e[1];
  }
  return out;
}

Matrix AnalyticModel::eval(const Matrix& x, std::span<const double> sigma,
                           std::span<const int> classes, std::span<const double> omega) const {
  Matrix out(x.rows(), kDataDim);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Point p{x(r, 0), x(r, 1)};
    const Point sc = data_.score(p, sigma[r], classes[r]);
    Point eps{-sigma[r] * sc[0], -sigma[r] * sc[1]};
    if (guided_) {
      const Point su = data_.score(p, sigma[r], kNullClass);
      eps = cfg_combine(eps, {-sigma[r] * su[0], -sigma[r] * su[1]}, omega[r]);
    }
    out(r, 0) = eps[0];
    out(r, 1) = eps[1];
  }
  count(guided_ ? 2 * x.rows() : x.rows());
  return out;
}

SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "deterministic_euler") return SamplerKind::deterministic_euler;
  if (s == "stochastic_em") return SamplerKind::stochastic_em;
  throw InputError("unknown sampler kind '" + s + "'");
}

std::string to_string(SamplerKind k) {
  return k == SamplerKind::deterministic_euler ? "deterministic_euler" : "stochastic_em";
}

Point initial_noise(std::uint64_t seed, double sigma_max) {
  Rng rng(seed, kInitStream);
  const double z0 = rng.normal();
  const double z1 = rng.normal();
  return {sigma_max * z0, sigma_max * z1};
}

SampleSet sample_batch(const EpsModel& model, const NoiseSchedule& schedule, SamplerKind kind,
                       std::span<const SampleSpec> specs, bool keep_trajectories) {
  const std::size_t n = specs.size();
  const std::size_t steps = schedule.steps();
  SampleSet out;
  out.diverged.assign(n, false);
  Matrix x(n, kDataDim);
  std::vector<int> classes(n);
  std::vector<double> omega(n);
  for (std::size_t r = 0; r < n; ++r) {
    const Point z = initial_noise(specs[r].seed, schedule.at(0));
    x(r, 0) = z[0];
    x(r, 1) = z[1];
    classes[r] = specs[r].cls;
    omega[r] = specs[r].omega;
  }
  if (keep_trajectories) {
    out.trajectories.assign(n, {});
    for (auto& tr : out.trajectories) tr.reserve(steps);
  }

  std::vector<double> sigma(n);
  for (std::size_t i = 0; i < steps; ++i) {
    const double s_cur = schedule.at(i);
    const double s_next = schedule.at(i + 1);
    std::fill(sigma.begin(), sigma.end(), s_cur);
    const Matrix eps = model.predict(x, sigma, classes, omega);
    for (std::size_t r = 0; r < n; ++r) {
      if (out.diverged[r]) continue;
      const Point e{eps(r, 0), eps(r, 1)};
      if (!std::isfinite(e[0]) || !std::isfinite(e[1])) {
        out.diverged[r] = true;
        x(r, 0) = x(r, 1) = 0.0;
        continue;
      }
      if (keep_trajectories) out.trajectories[r].push_back({{x(r, 0), x(r, 1)}, s_cur, e});
      if (kind == SamplerKind::deterministic_euler) {
        const double h = s_next - s_cur;
        x(r, 0) += h * e[0];
        x(r, 1) += h * e[1];
      } else {
        Rng noise = Rng(specs[r].seed, kStepStream).split(i);
        const double h = 2.0 * (s_next - s_cur);
        const double amp = std::sqrt(s_cur * s_cur - s_next * s_next);
        const double z0 = noise.normal();
        const double z1 = noise.normal();
        x(r, 0) += h * e[0] + amp * z0;
        x(r, 1) += h * e[1] + amp * z1;
      }
      if (!std::isfinite(x(r, 0)) || !std::isfinite(x(r, 1))) {
        out.diverged[r] = true;
        x(r, 0) = x(r, 1) = 0.0;
      }
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (out.diverged[r]) x(r, 0) = x(r, 1) = NAN;
  }
  out.endpoints = std::move(x);
  return out;
}

SampleResult sample(const EpsModel& model, const NoiseSchedule& schedule, SamplerKind kind,
                    int cls, double omega, std::uint64_t seed) {
  const SampleSpec spec{seed, cls, omega};
  SampleSet set = sample_batch(model, schedule, kind, std::span(&spec, 1), true);
  if (set.diverged[0]) throw SamplerDivergence("sampler diverged for seed " + std::to_string(seed));
  return {{set.endpoints(0, 0), set.endpoints(0, 1)}, std::move(set.trajectories[0])};
}

}  // namespace agd::diffusion
