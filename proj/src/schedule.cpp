#include "agd/schedule.hpp"

#include <cmath>

#include "agd/errors.hpp"
#include "agd/hash.hpp"

namespace agd::diffusion {

NoiseSchedule::NoiseSchedule(const ScheduleConfig& cfg) : cfg_(cfg) {
  if (!(cfg.sigma_min > 0.0) || !(cfg.sigma_max > cfg.sigma_min)) {
    throw InputError("schedule needs 0 < sigma_min < sigma_max");
  }
  if (cfg.steps < 1) throw InputError("schedule needs at least one step");
  if (!(cfg.rho > 0.0)) throw InputError("schedule rho must be positive");
  const double a = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
  const double b = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
  grid_.resize(cfg.steps + 1);
  if (cfg.steps == 1) {
    grid_[0] = cfg.sigma_max;
  } else {
    for (std::size_t i = 0; i < cfg.steps; ++i) {
      const double f = static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
      grid_[i] = std::pow(a + f * (b - a), cfg.rho);
    }
    // Pin the endpoints against pow round-off.
    grid_[0] = cfg.sigma_max;
    grid_[cfg.steps - 1] = cfg.sigma_min;
  }
  grid_[cfg.steps] = 0.0;
}

double NoiseSchedule::sigma(double t) const {
  if (t < 0.0 || t > cfg_.sigma_max) throw InputError("t outside [0, T]");
  return t;
}

double NoiseSchedule::sigma_dot(double) const { return 1.0; }

std::uint64_t NoiseSchedule::hash() const {
  Fnv1a h;
  h.update(std::span<const double>(grid_));
  return h.digest();
}

}  // namespace agd::diffusion
