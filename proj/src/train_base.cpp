#include "agd/train_base.hpp"

#include <cmath>

#include "agd/errors.hpp"
#include "agd/sampler.hpp"

namespace agd::diffusion {

using nn::Matrix;

BaseTrainResult train_base(const ToyDataset& data, const NoiseSchedule& schedule,
                           const DenoiserConfig& model_cfg, const BaseTrainConfig& cfg) {
  if (cfg.batch == 0) throw InputError("train_base: batch must be positive");
  if (cfg.cond_dropout < 0.0 || cfg.cond_dropout > 1.0) {
    throw InputError("train_base: condition dropout must lie in [0, 1]");
  }
  if (model_cfg.num_classes != data.class_count()) {
    throw InputError("train_base: model class count does not match the dataset");
  }
  BaseTrainResult result{Denoiser(model_cfg, cfg.seed), {}};
  Denoiser& model = result.model;
  model.set_schedule_hash(schedule.hash());

  auto params = model.mutable_parameters();
  nn::AdamState adam(params);
  const double log_lo = std::log(schedule.config().sigma_min);
  const double log_hi = std::log(schedule.config().sigma_max);
  const std::size_t b = cfg.batch;
  const std::vector<double> weights(b, 1.0 / static_cast<double>(b * kDataDim));

  Matrix x(b, kDataDim);
  Matrix eps(b, kDataDim);
  std::vector<double> sigma(b);
  std::vector<int> classes(b);
  result.loss_curve.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng rng = Rng(cfg.seed, 0xba5e).split(step);
    for (std::size_t r = 0; r < b; ++r) {
      const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(data.class_count())));
      const Point x0 = data.sample(c, rng);
      sigma[r] = std::exp(log_lo + (log_hi - log_lo) * rng.uniform());
      const auto [xt, e] = forward_perturb(x0, sigma[r], rng);
      x(r, 0) = xt[0];
      x(r, 1) = xt[1];
      eps(r, 0) = e[0];
      eps(r, 1) = e[1];
      classes[r] = rng.uniform() < cfg.cond_dropout ? kNullClass : c;
    }
    nn::Tape tape;
    nn::Var pred = model.forward(tape, x, sigma, classes);
    nn::Var diff = nn::sub(tape, pred, tape.constant(eps));
    nn::Var loss = nn::weighted_sum(tape, nn::row_sum_squares(tape, diff), weights);
    const double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv)) {
      throw NumericError("base training diverged at step " + std::to_string(step));
    }
    result.loss_curve.push_back(lv);
    tape.backward(loss);
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (const nn::Parameter* p : params) grads.push_back(tape.grad_of(*p));
    nn::clip_global_norm(grads, cfg.grad_clip);
    adam.step(params, grads, nn::lr_schedule(step, cfg.steps, cfg.lr));
  }
  return result;
}

}  // namespace agd::diffusion
