#include "agd/distill.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <string>

#include "agd/binary_io.hpp"
#include "agd/errors.hpp"

namespace agd::distill {

using diffusion::Point;
using nn::Matrix;
using nn::Tape;
using nn::Var;

LossKind parse_loss(const std::string& s) {
  if (s == "l2") return LossKind::l2;
  if (s == "l1") return LossKind::l1;
  if (s == "weighted_l2") return LossKind::weighted_l2;
  throw InputError("unknown loss '" + s + "'");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::l2: return "l2";
    case LossKind::l1: return "l1";
    case LossKind::weighted_l2: return "weighted_l2";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "agd_adapters") return Mode::agd_adapters;
  if (s == "gd_full_finetune") return Mode::gd_full_finetune;
  throw InputError("unknown distillation mode '" + s + "'");
}

std::string to_string(Mode m) {
  return m == Mode::agd_adapters ? "agd_adapters" : "gd_full_finetune";
}

double loss_weight(const LossSpec& spec, double sigma) {
  if (spec.kind != LossKind::weighted_l2) return 1.0;
  return spec.lambda_power == 0.0 ? 1.0 : std::pow(sigma, spec.lambda_power);
}

double loss_eval(const LossSpec& spec, const Point& pred, const Point& target, double sigma) {
  const double d0 = pred[0] - target[0];
  const double d1 = pred[1] - target[1];
  if (spec.kind == LossKind::l1) return std::abs(d0) + std::abs(d1);
  return loss_weight(spec, sigma) * (d0 * d0 + d1 * d1);
}

Var batch_loss(Tape& t, Var pred, const Matrix& target, std::span<const double> sigma,
               const LossSpec& spec) {
  const std::size_t b = target.rows();
  if (t.value(pred).rows() != b || sigma.size() != b) {
    throw DimensionError("batch_loss: prediction, target and sigma sizes differ");
  }
  const Var diff = nn::sub(t, pred, t.constant(target));
  const Var per_row =
      spec.kind == LossKind::l1 ? nn::row_sum_abs(t, diff) : nn::row_sum_squares(t, diff);
  std::vector<double> w(b);
  for (std::size_t r = 0; r < b; ++r) w[r] = loss_weight(spec, sigma[r]) / static_cast<double>(b);
  return nn::weighted_sum(t, per_row, w);
}

void DistillRun::write_csv(const std::filesystem::path& path) const {
  std::string out = "step,loss,lr,wall_ms\n";
  for (const auto& s : curve) {
    out += fmt::format("{},{:.17g},{:.17g},{:.6f}\n", s.step, s.loss, s.lr, s.wall_ms);
  }
  io::write_text(path, out);
}

namespace {

struct Batch {
  Matrix x;
  Matrix target;
  std::vector<double> sigma;
  std::vector<int> classes;
  std::vector<double> omega;
};

Batch make_batch(const store::TrajectoryStore& store, std::size_t size, std::uint64_t seed) {
  const auto recs = store::sample_minibatch(store, size, seed);
  Batch b{Matrix(size, 2), Matrix(size, 2), {}, {}, {}};
  for (std::size_t r = 0; r < size; ++r) {
    b.x(r, 0) = recs[r].x[0];
    b.x(r, 1) = recs[r].x[1];
    b.target(r, 0) = recs[r].eps_target[0];
    b.target(r, 1) = recs[r].eps_target[1];
    b.sigma.push_back(recs[r].sigma);
    b.classes.push_back(recs[r].cls);
    b.omega.push_back(recs[r].omega);
  }
  return b;
}

void check_compat(const store::TrajectoryStore& store, const diffusion::Denoiser& base,
                  const DistillConfig& cfg) {
  if (!(cfg.peak_lr > 0.0)) throw InputError("peak_lr must be positive");
  if (cfg.batch == 0) throw InputError("batch must be positive");
  if (store.header().schedule_hash != base.schedule_hash()) {
    throw CompatibilityError("store schedule hash does not match the base model's schedule");
  }
  if (store.header().teacher_hash != base.parameter_hash()) {
    throw CompatibilityError("store was generated by a different teacher");
  }
}

using PredictFn = std::function<Var(Tape&, const Batch&, Rng&)>;

DistillRun train_loop(const store::TrajectoryStore& store, const diffusion::Denoiser& base,
                      std::span<nn::Parameter* const> params, const PredictFn& predict,
                      const DistillConfig& cfg) {
  DistillRun run;
  run.base_hash_before = base.parameter_hash();
  const std::uint64_t nfe_before = base.nfe();
  if (cfg.steps > 0 && store.empty()) throw PreconditionError("cannot distill from an empty store");
  nn::AdamState adam(params);
  double total_ms = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng step_rng = Rng(cfg.seed, 0xd157).split(step);
    const Batch b = make_batch(store, cfg.batch, step_rng.next_u64());
    Rng mask_rng = step_rng.split(1);
    Tape t;
    const Var pred = predict(t, b, mask_rng);
    const Var loss = batch_loss(t, pred, b.target, b.sigma, cfg.loss);
    const double lv = t.value(loss)(0, 0);
    if (!std::isfinite(lv)) {
      throw NumericError(fmt::format("distillation loss became non-finite at step {}", step));
    }
    t.backward(loss);
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (const nn::Parameter* p : params) grads.push_back(t.grad_of(*p));
    if (cfg.grad_clip > 0.0) nn::clip_global_norm(grads, cfg.grad_clip);
    const double lr = nn::lr_schedule(step, cfg.steps, cfg.peak_lr);
    adam.step(params, grads, lr);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total_ms += ms;
    run.curve.push_back({step, lv, lr, ms});
  }
  run.mean_step_ms = cfg.steps > 0 ? total_ms / static_cast<double>(cfg.steps) : 0.0;
  run.base_hash_after = base.parameter_hash();
  run.teacher_nfe = base.nfe() - nfe_before;
  run.base_parameters = base.parameter_count();
  return run;
}

}  // namespace

DistillRun distill(const store::TrajectoryStore& store, const diffusion::Denoiser& base,
                   adapters::AdapterStack& stack, const DistillConfig& cfg) {
  check_compat(store, base, cfg);
  if (!base.frozen()) throw PreconditionError("adapter distillation requires a frozen base");
  if (stack.base_hash() != base.parameter_hash()) {
    throw CompatibilityError("adapter stack was built for a different base model");
  }
  auto params = stack.parameters();
  const PredictFn predict = [&](Tape& t, const Batch& b, Rng& mask) {
    return adapters::guided_forward(t, base, stack, b.x, b.sigma, b.classes, b.omega, true,
                                    &mask);
  };
  DistillRun run = train_loop(store, base, params, predict, cfg);
  run.trainable_parameters = stack.parameter_count();
  run.parameter_ratio = stack.parameter_ratio(base);
  return run;
}

OmegaPathway OmegaPathway::make(const OmegaPathwayConfig& cfg, std::size_t embed_dim) {
  if (cfg.frequencies == 0) throw InputError("omega pathway needs at least one frequency");
  OmegaPathway p;
  p.fourier = nn::FourierEncoder(1, cfg.frequencies, cfg.scale, Rng(cfg.seed, 0x0e).key());
  Rng rng(cfg.seed, 0x0f);
  const std::size_t w[] = {p.fourier.output_dim(), embed_dim, embed_dim};
  p.mlp = nn::MlpParams::make("gd.omega_mlp", w, nn::Activation::silu, rng);
  if (cfg.init == nn::InitScheme::zero) p.mlp.layers.back().zero();
  return p;
}

Var OmegaPathway::forward(Tape& t, std::span<const double> omega) const {
  Matrix om(omega.size(), 1);
  for (std::size_t i = 0; i < omega.size(); ++i) om(i, 0) = omega[i];
  return mlp.forward(t, t.constant(fourier.encode(om)));
}

void OmegaPathway::collect(std::vector<nn::Parameter*>& out) { mlp.collect(out); }
void OmegaPathway::collect(std::vector<const nn::Parameter*>& out) const { mlp.collect(out); }

GdModel::GdModel(const diffusion::Denoiser& base, const OmegaPathwayConfig& cfg)
    : net_(base), pathway_(OmegaPathway::make(cfg, base.config().embed_dim)) {
  net_.set_frozen(false);
  net_.reset_nfe();
}

Var GdModel::forward(Tape& t, const Matrix& x, std::span<const double> sigma,
                     std::span<const int> classes, std::span<const double> omega) const {
  if (omega.size() != x.rows()) throw DimensionError("gd model: one omega per row required");
  diffusion::Denoiser::Hooks hooks;
  hooks.time_embedding = [&](Tape& tp, Var temb) {
    return nn::add(tp, temb, pathway_.forward(tp, omega));
  };
  return net_.forward(t, x, sigma, classes, &hooks);
}

std::vector<nn::Parameter*> GdModel::parameters() {
  auto out = net_.mutable_parameters();
  pathway_.collect(out);
  return out;
}

std::size_t GdModel::parameter_count() const {
  std::vector<const nn::Parameter*> ps = net_.parameters();
  pathway_.collect(ps);
  return nn::count_parameters(ps);
}

Matrix GdEpsModel::eval(const Matrix& x, std::span<const double> sigma,
                        std::span<const int> classes, std::span<const double> omega) const {
  Tape t;
  const Var y = m_.forward(t, x, sigma, classes, omega);
  count(x.rows());
  return t.value(y);
}

DistillRun gd_finetune(const store::TrajectoryStore& store, const diffusion::Denoiser& base,
                       GdModel& model, const DistillConfig& cfg) {
  check_compat(store, base, cfg);
  auto params = model.parameters();
  const PredictFn predict = [&](Tape& t, const Batch& b, Rng&) {
    return model.forward(t, b.x, b.sigma, b.classes, b.omega);
  };
  DistillRun run = train_loop(store, base, params, predict, cfg);
  run.trainable_parameters = model.parameter_count();
  run.parameter_ratio =
      static_cast<double>(run.trainable_parameters) / static_cast<double>(base.parameter_count());
  return run;
}

double teacher_matching_loss(const diffusion::EpsModel& model, const store::TrajectoryStore& store,
                             const LossSpec& spec) {
  if (store.empty()) throw PreconditionError("teacher_matching_loss on an empty store");
  constexpr std::size_t kChunk = 1024;
  const auto& recs = store.records();
  double total = 0.0;
  for (std::size_t start = 0; start < recs.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, recs.size() - start);
    Matrix x(n, 2);
    std::vector<double> sigma(n), omega(n);
    std::vector<int> classes(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = recs[start + i];
      x(i, 0) = r.x[0];
      x(i, 1) = r.x[1];
      sigma[i] = r.sigma;
      omega[i] = r.omega;
      classes[i] = r.cls;
    }
    const Matrix y = model.predict(x, sigma, classes, omega);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = recs[start + i];
      total += loss_eval(spec, {y(i, 0), y(i, 1)}, r.eps_target, r.sigma);
    }
  }
  return total / static_cast<double>(recs.size());
}

}  // namespace agd::distill
