#include "agd/denoiser.hpp"

#include <cmath>
#include <string>

#include "agd/dataset.hpp"
#include "agd/errors.hpp"
#include "agd/hash.hpp"

namespace agd::diffusion {

using nn::Matrix;
using nn::Tape;
using nn::Var;

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_classes <= 0 || cfg.depth == 0 || cfg.hidden == 0 || cfg.embed_dim == 0) {
    throw InputError("denoiser: classes, depth, hidden and embed_dim must be positive");
  }
  Rng root(seed, 0xde);
  time_fourier_ = nn::FourierEncoder(1, cfg.time_frequencies, cfg.time_scale, root.split(1).key());
  Rng r2 = root.split(2);
  const std::size_t tw[] = {time_fourier_.output_dim(), cfg.embed_dim, cfg.embed_dim};
  time_mlp_ = nn::MlpParams::make("time_mlp", tw, nn::Activation::silu, r2);

  Rng r3 = root.split(3);
  Matrix table(static_cast<std::size_t>(cfg.num_classes) + 1, cfg.embed_dim);
  for (double& v : table.data()) v = 0.5 * r3.normal();
  class_table_ = nn::Parameter{"class_table", std::move(table), true};

  Rng r4 = root.split(4);
  std::size_t in = kDataDim + 2 * cfg.embed_dim;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    hidden_layers_.push_back(nn::Linear::make("trunk." + std::to_string(l), in, cfg.hidden, r4));
    in = cfg.hidden;
  }
  out_ = nn::Linear::make("trunk.out", cfg.hidden, kDataDim, r4);
}

int Denoiser::embedding_row(int c) const {
  if (c == kNullClass) return cfg_.num_classes;
  if (c < 0 || c >= cfg_.num_classes) throw InputError("unknown class id " + std::to_string(c));
  return c;
}

Var Denoiser::time_embedding(Tape& t, std::span<const double> sigma) const {
  Matrix logs(sigma.size(), 1);
  for (std::size_t i = 0; i < sigma.size(); ++i) logs(i, 0) = std::log(std::max(sigma[i], 1e-12));
  return time_mlp_.forward(t, t.constant(time_fourier_.encode(logs)));
}

Var Denoiser::class_embedding(Tape& t, std::span<const int> classes) const {
  std::vector<int> rows(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) rows[i] = embedding_row(classes[i]);
  return nn::gather_rows(t, t.param(class_table_), rows);
}

Var Denoiser::trunk(Tape& t, const Matrix& x, std::span<const double> sigma, Var temb, Var cemb,
                    const Hooks* hooks) const {
  if (x.cols() != kDataDim || x.rows() != sigma.size()) {
    throw DimensionError("denoiser: expected " + std::to_string(sigma.size()) + "x2 input");
  }
  Matrix scaled = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double c_in = 1.0 / std::sqrt(sigma[r] * sigma[r] + cfg_.sigma_data * cfg_.sigma_data);
    for (double& v : scaled.row(r)) v *= c_in;
  }
  const Var parts[] = {t.constant(std::move(scaled)), temb, cemb};
  Var h = nn::concat_cols(t, parts);
  for (std::size_t l = 0; l < hidden_layers_.size(); ++l) {
    h = hidden_layers_[l].forward(t, h);
    h = cfg_.activation == nn::Activation::relu ? nn::relu(t, h) : nn::silu(t, h);
    if (hooks != nullptr && hooks->hidden) h = hooks->hidden(t, l, h);
  }
  return out_.forward(t, h);
}

Var Denoiser::forward(Tape& t, const Matrix& x, std::span<const double> sigma,
                      std::span<const int> classes, const Hooks* hooks) const {
  if (classes.size() != x.rows()) throw DimensionError("denoiser: one class per row required");
  Var temb = time_embedding(t, sigma);
  if (hooks != nullptr && hooks->time_embedding) temb = hooks->time_embedding(t, temb);
  Var cemb = class_embedding(t, classes);
  return trunk(t, x, sigma, temb, cemb, hooks);
}

Matrix Denoiser::predict(const Matrix& x, std::span<const double> sigma,
                         std::span<const int> classes) const {
  Tape t;
  Var y = forward(t, x, sigma, classes);
  nfe_.add(x.rows());
  return t.value(y);
}

std::vector<nn::Parameter*> Denoiser::mutable_parameters() {
  if (frozen_) throw PreconditionError("denoiser is frozen");
  std::vector<nn::Parameter*> out;
  time_mlp_.collect(out);
  out.push_back(&class_table_);
  for (auto& l : hidden_layers_) l.collect(out);
  out_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> Denoiser::parameters() const {
  std::vector<const nn::Parameter*> out;
  time_mlp_.collect(out);
  out.push_back(&class_table_);
  for (const auto& l : hidden_layers_) l.collect(out);
  out_.collect(out);
  return out;
}

std::size_t Denoiser::parameter_count() const { return nn::count_parameters(parameters()); }

std::uint64_t Denoiser::parameter_hash() const {
  Fnv1a h;
  for (const nn::Parameter* p : parameters()) h.update(p->value.data());
  return h.digest();
}

void Denoiser::load_values(std::span<const Matrix> values) {
  const bool was_frozen = frozen_;
  frozen_ = false;
  auto params = mutable_parameters();
  frozen_ = was_frozen;
  if (values.size() != params.size()) throw DimensionError("denoiser: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i]->value.rows() ||
        values[i].cols() != params[i]->value.cols()) {
      throw DimensionError("denoiser: shape mismatch for " + params[i]->name);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

void Denoiser::set_frozen(bool frozen) {
  frozen_ = false;
  for (nn::Parameter* p : mutable_parameters()) p->trainable = !frozen;
  frozen_ = frozen;
}

}  // namespace agd::diffusion
