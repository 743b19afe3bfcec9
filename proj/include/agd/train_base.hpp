#pragma once

#include <cstdint>
#include <vector>

#include "agd/dataset.hpp"
#include "agd/denoiser.hpp"
#include "agd/schedule.hpp"

namespace agd::diffusion {

struct BaseTrainConfig {
  std::size_t steps = 4000;
  std::size_t batch = 256;
  double lr = 2e-3;
  /// Probability of replacing the label with the null condition.
  double cond_dropout = 0.1;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
};

struct BaseTrainResult {
  Denoiser model;
  /// Per-step mean squared error per output coordinate (a zero predictor scores 1).
  std::vector<double> loss_curve;
};

/// Trains eps_theta with the noise-prediction objective, sigma drawn
/// log-uniformly over the schedule's [sigma_min, sigma_max]. Throws
/// NumericError when the loss diverges.
BaseTrainResult train_base(const ToyDataset& data, const NoiseSchedule& schedule,
                           const DenoiserConfig& model_cfg, const BaseTrainConfig& cfg);

}  // namespace agd::diffusion
