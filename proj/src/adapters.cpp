#include "agd/adapters.hpp"

#include <cmath>
#include <string>

#include "agd/errors.hpp"
#include "agd/hash.hpp"

namespace agd::adapters {

using nn::Matrix;
using nn::Tape;
using nn::Var;

Architecture parse_architecture(const std::string& s) {
  if (s == "cross_attention") return Architecture::cross_attention;
  if (s == "offset") return Architecture::offset;
  if (s == "gating") return Architecture::gating;
  if (s == "positional") return Architecture::positional;
  throw InputError("unknown adapter architecture '" + s + "'");
}

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::cross_attention: return "cross_attention";
    case Architecture::offset: return "offset";
    case Architecture::gating: return "gating";
    case Architecture::positional: return "positional";
  }
  return "?";
}

nn::InitScheme parse_init(const std::string& s) {
  if (s == "xavier") return nn::InitScheme::xavier;
  if (s == "zero") return nn::InitScheme::zero;
  throw InputError("unknown init scheme '" + s + "'");
}

std::string to_string(nn::InitScheme s) { return s == nn::InitScheme::xavier ? "xavier" : "zero"; }

ConditionEncoder ConditionEncoder::make(const AdapterConfig& cfg, std::size_t embed_dim,
                                        Rng& rng) {
  if (cfg.width == 0 || cfg.omega_frequencies == 0) {
    throw InputError("adapter width and omega frequencies must be positive");
  }
  ConditionEncoder e;
  e.omega_fourier =
      nn::FourierEncoder(1, cfg.omega_frequencies, cfg.omega_scale, rng.split(1).key());
  Rng r = rng.split(2);
  const std::size_t w[] = {e.omega_fourier.output_dim(), cfg.width, cfg.width};
  e.omega_mlp = nn::MlpParams::make("cond.omega_mlp", w, cfg.activation, r);
  e.class_proj = nn::Linear::make("cond.class_proj", embed_dim, cfg.width, r, false);
  e.sigma_proj = nn::Linear::make("cond.sigma_proj", embed_dim, cfg.width, r, false);
  return e;
}

Var ConditionEncoder::encode(Tape& t, std::span<const double> omega, Var temb, Var cemb) const {
  Matrix om(omega.size(), 1);
  for (std::size_t i = 0; i < omega.size(); ++i) {
    if (!std::isfinite(omega[i])) throw InputError("guidance scale must be finite");
    om(i, 0) = omega[i];
  }
  const Var parts[] = {omega_mlp.forward(t, t.constant(omega_fourier.encode(om))),
                       class_proj.forward(t, cemb), sigma_proj.forward(t, temb)};
  return nn::interleave_rows(t, parts);
}

void ConditionEncoder::collect(std::vector<nn::Parameter*>& out) {
  omega_mlp.collect(out);
  class_proj.collect(out);
  sigma_proj.collect(out);
}

void ConditionEncoder::collect(std::vector<const nn::Parameter*>& out) const {
  omega_mlp.collect(out);
  class_proj.collect(out);
  sigma_proj.collect(out);
}

Adapter Adapter::make(const AdapterConfig& cfg, std::size_t layer, std::size_t layer_width,
                      Rng& rng) {
  if (cfg.tokens == 0 || layer_width % cfg.tokens != 0) {
    throw InputError("trunk width " + std::to_string(layer_width) +
                     " is not divisible by adapter tokens " + std::to_string(cfg.tokens));
  }
  Adapter a;
  a.arch = cfg.arch;
  a.tokens = cfg.tokens;
  a.token_width = layer_width / cfg.tokens;
  const std::string name = "adapter." + std::to_string(layer);
  const std::size_t d = cfg.width;
  const std::size_t h = cfg.mlp_hidden;
  switch (cfg.arch) {
    case Architecture::cross_attention:
      a.wq = nn::Linear::make(name + ".wq", a.token_width, d, rng, false);
      a.wk = nn::Linear::make(name + ".wk", d, d, rng, false);
      a.wv = nn::Linear::make(name + ".wv", d, a.token_width, rng, false);
      break;
    case Architecture::offset: {
      const std::size_t w[] = {d, h, a.token_width};
      a.mlp = nn::MlpParams::make(name + ".mlp", w, cfg.activation, rng, cfg.dropout);
      break;
    }
    case Architecture::gating: {
      const std::size_t in = a.token_width + d;
      const std::size_t w[] = {in, h, h};
      a.mlp = nn::MlpParams::make(name + ".mlp", w, cfg.activation, rng, cfg.dropout);
      a.gate_v = nn::Linear::make(name + ".gate_v", in, 1, rng, false);
      a.gate_w = nn::Linear::make(name + ".gate_w", h, a.token_width, rng, false);
      break;
    }
    case Architecture::positional: {
      nn::FourierEncoder pos(1, cfg.position_frequencies, 1.0, rng.split(layer + 100).key());
      Matrix j(cfg.tokens, 1);
      for (std::size_t i = 0; i < cfg.tokens; ++i) {
        j(i, 0) = static_cast<double>(i) / static_cast<double>(cfg.tokens);
      }
      a.position_features = pos.encode(j);
      const std::size_t w[] = {pos.output_dim() + d, h, a.token_width};
      a.mlp = nn::MlpParams::make(name + ".mlp", w, cfg.activation, rng, cfg.dropout);
      break;
    }
  }
  if (cfg.init == nn::InitScheme::zero) a.zero_output();
  return a;
}

Var Adapter::forward(Tape& t, Var z, Var c, std::size_t batch, bool train_mode,
                     Rng* mask_rng) const {
  const Matrix& zv = t.value(z);
  const Matrix& cv = t.value(c);
  if (zv.rows() != batch * tokens || zv.cols() != token_width ||
      cv.rows() != batch * kConditionRows) {
    throw DimensionError("adapter: Z must be " + std::to_string(batch * tokens) + "x" +
                         std::to_string(token_width) + " and C must have " +
                         std::to_string(batch * kConditionRows) + " rows");
  }
  switch (arch) {
    case Architecture::cross_attention: {
      const Var q = wq.forward(t, z);
      const Var k = wk.forward(t, c);
      const Var v = wv.forward(t, c);
      return nn::grouped_attention(t, q, k, v, batch);
    }
    case Architecture::offset: {
      const Var csum = nn::group_sum_rows(t, c, kConditionRows);
      return nn::repeat_rows(t, mlp.forward(t, csum, train_mode, mask_rng), tokens);
    }
    case Architecture::gating: {
      const Var csum = nn::repeat_rows(t, nn::group_sum_rows(t, c, kConditionRows), tokens);
      const Var parts[] = {z, csum};
      const Var zt = nn::concat_cols(t, parts);
      const Var gate = nn::sigmoid(t, gate_v.forward(t, zt));
      return gate_w.forward(t, nn::row_scale(t, mlp.forward(t, zt, train_mode, mask_rng), gate));
    }
    case Architecture::positional: {
      const Var csum = nn::repeat_rows(t, nn::group_sum_rows(t, c, kConditionRows), tokens);
      const Var parts[] = {nn::tile_rows(t, t.constant(position_features), batch), csum};
      return mlp.forward(t, nn::concat_cols(t, parts), train_mode, mask_rng);
    }
  }
  throw InputError("adapter: unknown architecture");
}

void Adapter::zero_output() {
  switch (arch) {
    case Architecture::cross_attention: wv.zero(); break;
    case Architecture::gating: gate_w.zero(); break;
    case Architecture::offset:
    case Architecture::positional: mlp.layers.back().zero(); break;
  }
}

namespace {

template <class A, class P>
void collect_adapter(A& a, std::vector<P*>& out) {
  switch (a.arch) {
    case Architecture::cross_attention:
      a.wq.collect(out);
      a.wk.collect(out);
      a.wv.collect(out);
      break;
    case Architecture::gating:
      a.mlp.collect(out);
      a.gate_v.collect(out);
      a.gate_w.collect(out);
      break;
    case Architecture::offset:
    case Architecture::positional: a.mlp.collect(out); break;
  }
}

}  // namespace

void Adapter::collect(std::vector<nn::Parameter*>& out) { collect_adapter(*this, out); }

void Adapter::collect(std::vector<const nn::Parameter*>& out) const {
  collect_adapter(*this, out);
}

AdapterStack::AdapterStack(const AdapterConfig& cfg, const diffusion::Denoiser& base) : cfg_(cfg) {
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw InputError("dropout rate must lie in [0, 1)");
  Rng root(cfg.seed, 0xada);
  Rng enc_rng = root.split(0);
  encoder_ = ConditionEncoder::make(cfg, base.config().embed_dim, enc_rng);
  for (std::size_t l = 0; l < base.config().depth; ++l) {
    Rng r = root.split(l + 1);
    layers_.push_back(Adapter::make(cfg, l, base.config().hidden, r));
  }
  base_hash_ = base.parameter_hash();
}

std::vector<nn::Parameter*> AdapterStack::parameters() {
  std::vector<nn::Parameter*> out;
  encoder_.collect(out);
  for (auto& a : layers_) a.collect(out);
  return out;
}

std::vector<const nn::Parameter*> AdapterStack::parameters() const {
  std::vector<const nn::Parameter*> out;
  encoder_.collect(out);
  for (const auto& a : layers_) a.collect(out);
  return out;
}

std::size_t AdapterStack::parameter_count() const { return nn::count_parameters(parameters()); }

std::uint64_t AdapterStack::parameter_hash() const {
  Fnv1a h;
  for (const nn::Parameter* p : parameters()) h.update(p->value.data());
  return h.digest();
}

double AdapterStack::parameter_ratio(const diffusion::Denoiser& base) const {
  return static_cast<double>(parameter_count()) / static_cast<double>(base.parameter_count());
}

void AdapterStack::load_values(std::span<const Matrix> values) {
  auto params = parameters();
  if (values.size() != params.size()) throw DimensionError("adapter stack: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i]->value.rows() ||
        values[i].cols() != params[i]->value.cols()) {
      throw DimensionError("adapter stack: shape mismatch for " + params[i]->name);
    }
    params[i]->value = values[i];
  }
}

Matrix encode_conditions(const AdapterStack& stack, const diffusion::Denoiser& base, double omega,
                         double sigma, int cls) {
  Tape t;
  const double s[] = {sigma};
  const int c[] = {cls};
  const double o[] = {omega};
  const Var temb = base.time_embedding(t, s);
  const Var cemb = base.class_embedding(t, c);
  return t.value(stack.encoder().encode(t, o, temb, cemb));
}

Matrix adapter_forward(const Adapter& adapter, const Matrix& z, const Matrix& c) {
  Tape t;
  return t.value(adapter.forward(t, t.constant(z), t.constant(c), 1));
}

Var guided_forward(Tape& t, const diffusion::Denoiser& base, const AdapterStack& stack,
                   const Matrix& x, std::span<const double> sigma, std::span<const int> classes,
                   std::span<const double> omega, bool train_mode, Rng* mask_rng) {
  const std::size_t batch = x.rows();
  if (classes.size() != batch || omega.size() != batch || sigma.size() != batch) {
    throw DimensionError("guided_forward: one sigma, class and omega per row required");
  }
  for (int c : classes) {
    if (c == diffusion::kNullClass) {
      throw PreconditionError("guided model is conditional; null class is not accepted");
    }
  }
  const Var temb = base.time_embedding(t, sigma);
  const Var cemb = base.class_embedding(t, classes);
  const Var cond = stack.encoder().encode(t, omega, temb, cemb);
  const std::size_t width = base.config().hidden;
  diffusion::Denoiser::Hooks hooks;
  hooks.hidden = [&](Tape& tp, std::size_t layer, Var h) {
    const Adapter& a = stack.layers()[layer];
    const Var z = nn::reshape(tp, h, batch * a.tokens, a.token_width);
    const Var g = a.forward(tp, z, cond, batch, train_mode, mask_rng);
    return nn::add(tp, h, nn::reshape(tp, g, batch, width));
  };
  return base.trunk(t, x, sigma, temb, cemb, &hooks);
}

diffusion::Point GuidedModel::forward(const diffusion::Point& x, double sigma, int cls,
                                      double omega) const {
  const Matrix xm(1, 2, {x[0], x[1]});
  const double s[] = {sigma};
  const int c[] = {cls};
  const double o[] = {omega};
  const Matrix y = predict(xm, s, c, o);
  if (!y.all_finite()) throw NumericError("guided model produced a non-finite prediction");
  return {y(0, 0), y(0, 1)};
}

Matrix GuidedModel::eval(const Matrix& x, std::span<const double> sigma,
                         std::span<const int> classes, std::span<const double> omega) const {
  Tape t;
  const Var y = guided_forward(t, base_, stack_, x, sigma, classes, omega);
  count(x.rows());
  return t.value(y);
}

}  // namespace agd::adapters
