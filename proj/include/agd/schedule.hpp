#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace agd::diffusion {

struct ScheduleConfig {
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double rho = 7.0;
  std::size_t steps = 64;
};

/// sigma(t) = t on [0, sigma_max], discretized with rho-spaced steps
/// sigma_0 = sigma_max > ... > sigma_{N-1} = sigma_min followed by sigma_N = 0.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleConfig& cfg = {});

  [[nodiscard]] double sigma(double t) const;
  [[nodiscard]] double sigma_dot(double t) const;
  [[nodiscard]] double t_max() const { return cfg_.sigma_max; }

  [[nodiscard]] std::size_t steps() const { return cfg_.steps; }
  /// N + 1 values, strictly decreasing, last one exactly 0.
  [[nodiscard]] const std::vector<double>& grid() const { return grid_; }
  [[nodiscard]] double at(std::size_t i) const { return grid_[i]; }
  [[nodiscard]] const ScheduleConfig& config() const { return cfg_; }

  /// FNV-1a over the grid values; identifies the discretization.
  [[nodiscard]] std::uint64_t hash() const;

 private:
  ScheduleConfig cfg_;
  std::vector<double> grid_;
};

}  // namespace agd::diffusion
