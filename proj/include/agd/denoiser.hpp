#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "agd/nn.hpp"

namespace agd::diffusion {

struct DenoiserConfig {
  int num_classes = 8;
  std::size_t embed_dim = 16;
  std::size_t hidden = 64;
  std::size_t depth = 3;  // hidden layers in the trunk
  std::size_t time_frequencies = 8;
  double time_scale = 0.5;
  /// Inputs are scaled by 1 / sqrt(sigma^2 + sigma_data^2).
  double sigma_data = 2.0;
  nn::Activation activation = nn::Activation::relu;
};

/// Copyable atomic counter for forward-pass accounting.
class NfeCounter {
 public:
  NfeCounter() = default;
  NfeCounter(const NfeCounter& o) : n_(o.get()) {}
  NfeCounter& operator=(const NfeCounter& o) {
    n_.store(o.get());
    return *this;
  }
  void add(std::uint64_t k) const { n_.fetch_add(k, std::memory_order_relaxed); }
  [[nodiscard]] std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }
  void reset() { n_.store(0); }

 private:
  mutable std::atomic<std::uint64_t> n_{0};
};

/// Class-conditional epsilon-prediction network eps_theta(x_t, sigma, c).
///
/// The noise level enters as Fourier features of log(sigma) followed by an
/// MLP; the class through an embedding table whose last row is the null
/// condition. The trunk is an MLP over [c_in * x_t, t-embedding, c-embedding].
class Denoiser {
 public:
  /// Hooks let callers modify the noise embedding and add residuals after
  /// every hidden trunk layer without touching the base parameters.
  struct Hooks {
    std::function<nn::Var(nn::Tape&, nn::Var)> time_embedding;
    std::function<nn::Var(nn::Tape&, std::size_t layer, nn::Var hidden)> hidden;
  };

  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

  [[nodiscard]] const DenoiserConfig& config() const { return cfg_; }
  [[nodiscard]] int num_classes() const { return cfg_.num_classes; }

  nn::Var time_embedding(nn::Tape& t, std::span<const double> sigma) const;
  nn::Var class_embedding(nn::Tape& t, std::span<const int> classes) const;
  nn::Var trunk(nn::Tape& t, const nn::Matrix& x, std::span<const double> sigma, nn::Var temb,
                nn::Var cemb, const Hooks* hooks = nullptr) const;

  /// Full forward on the tape. `classes` may contain kNullClass.
  nn::Var forward(nn::Tape& t, const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, const Hooks* hooks = nullptr) const;

  /// Inference forward; adds x.rows() to the NFE counter.
  [[nodiscard]] nn::Matrix predict(const nn::Matrix& x, std::span<const double> sigma,
                                   std::span<const int> classes) const;

  [[nodiscard]] std::uint64_t nfe() const { return nfe_.get(); }
  void reset_nfe() { nfe_.reset(); }

  /// Trainable tensors (throws PreconditionError while frozen).
  std::vector<nn::Parameter*> mutable_parameters();
  [[nodiscard]] std::vector<const nn::Parameter*> parameters() const;
  [[nodiscard]] std::size_t parameter_count() const;
  /// FNV-1a over all parameter values, in a fixed order.
  [[nodiscard]] std::uint64_t parameter_hash() const;

  /// Overwrites parameter values in parameters() order; shapes must match.
  /// Allowed while frozen: it restores a model rather than training it.
  void load_values(std::span<const nn::Matrix> values);

  void set_frozen(bool frozen);
  [[nodiscard]] bool frozen() const { return frozen_; }

  [[nodiscard]] std::uint64_t schedule_hash() const { return schedule_hash_; }
  void set_schedule_hash(std::uint64_t h) { schedule_hash_ = h; }

  [[nodiscard]] const nn::FourierEncoder& time_encoder() const { return time_fourier_; }
  void set_time_encoder(nn::FourierEncoder enc) { time_fourier_ = std::move(enc); }

  /// Maps kNullClass to the null row; throws InputError on unknown ids.
  [[nodiscard]] int embedding_row(int c) const;

 private:
  DenoiserConfig cfg_;
  nn::FourierEncoder time_fourier_;
  nn::MlpParams time_mlp_;
  nn::Parameter class_table_;
  std::vector<nn::Linear> hidden_layers_;
  nn::Linear out_;
  bool frozen_ = false;
  std::uint64_t schedule_hash_ = 0;
  NfeCounter nfe_;
};

}  // namespace agd::diffusion
