#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agd/matrix.hpp"
#include "agd/rng.hpp"
#include "agd/tape.hpp"

namespace agd::nn {

enum class Activation { relu, silu, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

enum class InitScheme { xavier, zero };

/// Xavier-uniform weights, bound sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out, empty when has_bias is false
  bool has_bias = true;

  static Linear make(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     bool with_bias = true);
  [[nodiscard]] std::size_t in() const { return weight.value.rows(); }
  [[nodiscard]] std::size_t out() const { return weight.value.cols(); }
  Var forward(Tape& t, Var x) const;
  void zero();
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

/// Stack of linear layers with an activation between them (none after the last).
struct MlpParams {
  std::vector<Linear> layers;
  Activation activation = Activation::silu;
  double dropout = 0.0;

  /// `widths` = {in, hidden..., out}.
  static MlpParams make(const std::string& name, std::span<const std::size_t> widths,
                        Activation act, Rng& rng, double dropout = 0.0);
  [[nodiscard]] std::size_t in() const { return layers.front().in(); }
  [[nodiscard]] std::size_t out() const { return layers.back().out(); }
  /// Dropout is applied after each hidden activation only when `train_mode`
  /// is set and a mask stream is provided.
  Var forward(Tape& t, Var x, bool train_mode = false, Rng* mask_rng = nullptr) const;
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;
};

Matrix mlp_forward(const MlpParams& p, const Matrix& x, bool train_mode = false,
                   Rng* mask_rng = nullptr);

/// Random Fourier features [sin(2 pi B x), cos(2 pi B x)]. B is drawn once at
/// construction and never changes.
class FourierEncoder {
 public:
  FourierEncoder() = default;
  FourierEncoder(std::size_t input_dim, std::size_t num_frequencies, double scale,
                 std::uint64_t seed);
  /// Rebuilds an encoder from a stored frequency matrix.
  explicit FourierEncoder(Matrix frequencies);

  [[nodiscard]] std::size_t input_dim() const { return b_.cols(); }
  [[nodiscard]] std::size_t num_frequencies() const { return b_.rows(); }
  [[nodiscard]] std::size_t output_dim() const { return 2 * b_.rows(); }
  [[nodiscard]] const Matrix& frequencies() const { return b_; }

  /// x: (n x input_dim) -> (n x output_dim).
  [[nodiscard]] Matrix encode(const Matrix& x) const;

 private:
  Matrix b_;  // num_frequencies x input_dim
};

/// Adam without weight decay.
class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::span<Parameter* const> params);

  /// One bias-corrected update. Throws NumericError on non-finite gradients
  /// and DimensionError when shapes disagree with the registered parameters.
  void step(std::span<Parameter* const> params, std::span<const Matrix> grads, double lr);

  [[nodiscard]] std::uint64_t steps() const { return t_; }
  [[nodiscard]] const std::vector<Matrix>& first_moments() const { return m_; }
  [[nodiscard]] const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t t_ = 0;
};

/// Linear warm-up over the first ceil(0.1 * total) steps, then cosine decay to 0.
double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr);

/// Rescales grads in place so their global l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<Matrix> grads, double max_norm);

double global_norm(std::span<const Matrix> grads);

/// Compares reverse-mode gradients of the scalar built by `loss` against
/// central finite differences and returns
///   max |analytic - fd| / (|fd| + 1e-8)
/// over every entry of every parameter. Throws NumericError when the loss is
/// not finite.
double grad_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                  double step = 1e-5);

std::size_t count_parameters(std::span<const Parameter* const> params);

}  // namespace agd::nn
