#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agd/denoiser.hpp"
#include "agd/nn.hpp"
#include "agd/sampler.hpp"

namespace agd::adapters {

enum class Architecture { cross_attention, offset, gating, positional };

Architecture parse_architecture(const std::string& s);
std::string to_string(Architecture a);
nn::InitScheme parse_init(const std::string& s);
std::string to_string(nn::InitScheme s);

struct AdapterConfig {
  Architecture arch = Architecture::offset;
  std::size_t width = 4;          // d_a, shared width of every condition row
  std::size_t tokens = 4;         // a trunk layer of width W is read as tokens x (W / tokens)
  std::size_t mlp_hidden = 4;     // hidden width of the adapter MLPs
  nn::InitScheme init = nn::InitScheme::xavier;
  double dropout = 0.0;
  std::size_t omega_frequencies = 4;
  double omega_scale = 0.2;
  std::size_t position_frequencies = 2;
  nn::Activation activation = nn::Activation::silu;
  std::uint64_t seed = 0;
};

/// Builds the condition rows C = [c_omega, c_class, c_sigma], each of width d_a.
/// c_omega = MLP(Fourier(omega)); c_class and c_sigma are bias-free linear
/// projections of the base model's class and noise-level embeddings.
struct ConditionEncoder {
  nn::FourierEncoder omega_fourier;
  nn::MlpParams omega_mlp;
  nn::Linear class_proj;
  nn::Linear sigma_proj;

  static ConditionEncoder make(const AdapterConfig& cfg, std::size_t embed_dim, Rng& rng);
  [[nodiscard]] std::size_t width() const { return class_proj.out(); }

  /// Returns (3B x d_a) with rows 3b, 3b+1, 3b+2 = c_omega, c_class, c_sigma of sample b.
  nn::Var encode(nn::Tape& t, std::span<const double> omega, nn::Var temb, nn::Var cemb) const;

  void collect(std::vector<nn::Parameter*>& out);
  void collect(std::vector<const nn::Parameter*>& out) const;
};

inline constexpr std::size_t kConditionRows = 3;

/// One residual module g_psi(Z, C) for a single trunk layer.
struct Adapter {
  Architecture arch = Architecture::offset;
  std::size_t tokens = 0;
  std::size_t token_width = 0;
  // cross_attention
  nn::Linear wq, wk, wv;
  // offset, gating, positional
  nn::MlpParams mlp;
  // gating
  nn::Linear gate_v;
  nn::Linear gate_w;
  // positional
  nn::Matrix position_features;  // tokens x 2F, fixed

  static Adapter make(const AdapterConfig& cfg, std::size_t layer, std::size_t layer_width,
                      Rng& rng);

  /// Z: (B*tokens x token_width), C: (3B x d_a). Output has Z's shape.
  nn::Var forward(nn::Tape& t, nn::Var z, nn::Var c, std::size_t batch, bool train_mode = false,
                  Rng* mask_rng = nullptr) const;

  /// Zeroes the output layer so the residual vanishes identically.
  void zero_output();
  void collect(std::vector<nn::Parameter*>& out);
  void collect(std::vector<const nn::Parameter*>& out) const;
};

/// Adapters for every hidden trunk layer plus the shared condition encoder.
class AdapterStack {
 public:
  AdapterStack() = default;
  AdapterStack(const AdapterConfig& cfg, const diffusion::Denoiser& base);

  [[nodiscard]] const AdapterConfig& config() const { return cfg_; }
  [[nodiscard]] const ConditionEncoder& encoder() const { return encoder_; }
  [[nodiscard]] ConditionEncoder& mutable_encoder() { return encoder_; }
  [[nodiscard]] const std::vector<Adapter>& layers() const { return layers_; }
  [[nodiscard]] std::vector<Adapter>& mutable_layers() { return layers_; }
  [[nodiscard]] std::uint64_t base_hash() const { return base_hash_; }

  std::vector<nn::Parameter*> parameters();
  [[nodiscard]] std::vector<const nn::Parameter*> parameters() const;
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] std::uint64_t parameter_hash() const;
  /// |psi| / |theta|.
  [[nodiscard]] double parameter_ratio(const diffusion::Denoiser& base) const;

  /// Overwrites parameter values in parameters() order; shapes must match.
  void load_values(std::span<const nn::Matrix> values);

 private:
  AdapterConfig cfg_;
  ConditionEncoder encoder_;
  std::vector<Adapter> layers_;
  std::uint64_t base_hash_ = 0;
};

/// C for a single (omega, sigma, c); 3 x d_a.
nn::Matrix encode_conditions(const AdapterStack& stack, const diffusion::Denoiser& base,
                             double omega, double sigma, int cls);

/// adapter_forward on plain matrices, for one sample (Z: tokens x d_tok, C: 3 x d_a).
nn::Matrix adapter_forward(const Adapter& adapter, const nn::Matrix& z, const nn::Matrix& c);

/// Frozen base with residual adapters after every hidden layer, on the tape.
/// Rejects the null class.
nn::Var guided_forward(nn::Tape& t, const diffusion::Denoiser& base, const AdapterStack& stack,
                       const nn::Matrix& x, std::span<const double> sigma,
                       std::span<const int> classes, std::span<const double> omega,
                       bool train_mode = false, Rng* mask_rng = nullptr);

/// eps_[theta,psi](x_t, sigma, c, omega): one network pass per row.
class GuidedModel final : public diffusion::EpsModel {
 public:
  GuidedModel(const diffusion::Denoiser& base, const AdapterStack& stack)
      : base_(base), stack_(stack) {}

  /// Single prediction; throws NumericError when the output is not finite.
  [[nodiscard]] diffusion::Point forward(const diffusion::Point& x, double sigma, int cls,
                                         double omega) const;

 protected:
  nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, std::span<const double> omega) const override;

 private:
  const diffusion::Denoiser& base_;
  const AdapterStack& stack_;
};

}  // namespace agd::adapters
