#include "agd/nn.hpp"

#include <cmath>
#include <numbers>

#include "agd/errors.hpp"

namespace agd::nn {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "silu") return Activation::silu;
  if (name == "identity") return Activation::identity;
  throw InputError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::identity: return "identity";
  }
  return "?";
}

Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

Linear Linear::make(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                    bool with_bias) {
  Linear l;
  l.weight = Parameter{name + ".weight", xavier_uniform(in, out, rng), true};
  l.has_bias = with_bias;
  if (with_bias) l.bias = Parameter{name + ".bias", Matrix(1, out), true};
  return l;
}

Var Linear::forward(Tape& t, Var x) const {
  Var y = matmul(t, x, t.param(weight));
  if (has_bias) y = add_row(t, y, t.param(bias));
  return y;
}

void Linear::zero() {
  weight.value.fill(0.0);
  if (has_bias) bias.value.fill(0.0);
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

void Linear::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

MlpParams MlpParams::make(const std::string& name, std::span<const std::size_t> widths,
                          Activation act, Rng& rng, double dropout) {
  if (widths.size() < 2) throw DimensionError("MLP needs at least input and output widths");
  if (dropout < 0.0 || dropout >= 1.0) throw InputError("dropout rate must lie in [0, 1)");
  MlpParams p;
  p.activation = act;
  p.dropout = dropout;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    p.layers.push_back(
        Linear::make(name + "." + std::to_string(i), widths[i], widths[i + 1], rng));
  }
  return p;
}

Var MlpParams::forward(Tape& t, Var x, bool train_mode, Rng* mask_rng) const {
  if (t.value(x).cols() != in()) {
    throw DimensionError("mlp: input width " + std::to_string(t.value(x).cols()) +
                         " != " + std::to_string(in()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(t, x);
    if (i + 1 == layers.size()) break;
    switch (activation) {
      case Activation::relu: x = relu(t, x); break;
      case Activation::silu: x = silu(t, x); break;
      case Activation::identity: break;
    }
    if (train_mode && dropout > 0.0 && mask_rng != nullptr) x = nn::dropout(t, x, dropout, *mask_rng);
  }
  return x;
}

void MlpParams::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers) l.collect(out);
}

void MlpParams::collect(std::vector<const Parameter*>& out) const {
  for (const auto& l : layers) l.collect(out);
}

Matrix mlp_forward(const MlpParams& p, const Matrix& x, bool train_mode, Rng* mask_rng) {
  Tape t;
  Var y = p.forward(t, t.constant(x), train_mode, mask_rng);
  return t.value(y);
}

FourierEncoder::FourierEncoder(std::size_t input_dim, std::size_t num_frequencies, double scale,
                               std::uint64_t seed)
    : b_(num_frequencies, input_dim) {
  Rng rng(seed, 0xf0f0);
  for (double& v : b_.data()) v = scale * rng.normal();
}

FourierEncoder::FourierEncoder(Matrix frequencies) : b_(std::move(frequencies)) {}

Matrix FourierEncoder::encode(const Matrix& x) const {
  if (x.cols() != input_dim()) throw DimensionError("fourier: input width mismatch");
  const std::size_t f = num_frequencies();
  Matrix out(x.rows(), 2 * f);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < f; ++i) {
      double proj = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) proj += b_(i, c) * x(r, c);
      const double angle = 2.0 * std::numbers::pi * proj;
      out(r, i) = std::sin(angle);
      out(r, f + i) = std::cos(angle);
    }
  }
  return out;
}

AdamState::AdamState(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void AdamState::step(std::span<Parameter* const> params, std::span<const Matrix> grads,
                     double lr) {
  if (params.size() != m_.size() || grads.size() != params.size()) {
    throw DimensionError("adam: parameter count does not match optimizer state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != m_[i].rows() || grads[i].cols() != m_[i].cols() ||
        params[i]->value.size() != m_[i].size()) {
      throw DimensionError("adam: shape mismatch for " + params[i]->name);
    }
    if (!grads[i].all_finite()) throw NumericError("adam: non-finite gradient for " + params[i]->name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr) {
  if (total_steps == 0) return 0.0;
  const auto warm = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(total_steps)));
  if (step < warm) return peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return step >= total_steps ? 0.0 : peak_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double global_norm(std::span<const Matrix> grads) {
  double s = 0.0;
  for (const Matrix& g : grads) {
    for (double v : g.data()) s += v * v;
  }
  return std::sqrt(s);
}

double clip_global_norm(std::span<Matrix> grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (Matrix& g : grads) {
      for (double& v : g.data()) v *= f;
    }
  }
  return norm;
}

double grad_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                  double step) {
  Tape t;
  Var l = loss(t);
  if (!std::isfinite(t.value(l)(0, 0))) throw NumericError("grad_check: non-finite loss");
  t.backward(l);
  std::vector<Matrix> analytic;
  for (const Parameter* p : params) analytic.push_back(t.grad_of(*p));

  auto eval = [&]() {
    Tape tt;
    const double v = tt.value(loss(tt))(0, 0);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + step;
      const double fp = eval();
      w[j] = orig - step;
      const double fm = eval();
      w[j] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double err = std::abs(analytic[i].data()[j] - fd) / (std::abs(fd) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

std::size_t count_parameters(std::span<const Parameter* const> params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace agd::nn
