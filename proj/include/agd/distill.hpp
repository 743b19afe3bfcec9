#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "agd/adapters.hpp"
#include "agd/denoiser.hpp"
#include "agd/sampler.hpp"
#include "agd/trajectory_store.hpp"

namespace agd::distill {

enum class LossKind { l2, l1, weighted_l2 };

LossKind parse_loss(const std::string& s);
std::string to_string(LossKind k);

/// weighted_l2 uses lambda(sigma) = sigma^lambda_power (1 / sigma^2 by default).
struct LossSpec {
  LossKind kind = LossKind::l2;
  double lambda_power = -2.0;
};

double loss_weight(const LossSpec& spec, double sigma);
double loss_eval(const LossSpec& spec, const diffusion::Point& pred,
                 const diffusion::Point& target, double sigma);

/// Batch mean of loss_eval on the tape; `pred` is (B x 2).
nn::Var batch_loss(nn::Tape& t, nn::Var pred, const nn::Matrix& target,
                   std::span<const double> sigma, const LossSpec& spec);

enum class Mode { agd_adapters, gd_full_finetune };

Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct DistillConfig {
  std::size_t steps = 5000;
  std::size_t batch = 64;
  double peak_lr = 3e-3;
  LossSpec loss;
  Mode mode = Mode::agd_adapters;
  /// Global-norm clip; non-positive disables clipping.
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
};

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct DistillRun {
  std::vector<StepLog> curve;
  std::size_t trainable_parameters = 0;
  std::size_t base_parameters = 0;
  double parameter_ratio = 0.0;
  std::uint64_t base_hash_before = 0;
  std::uint64_t base_hash_after = 0;
  /// Teacher forward passes observed during training; always 0.
  std::uint64_t teacher_nfe = 0;
  double mean_step_ms = 0.0;

  void write_csv(const std::filesystem::path& path) const;
};

/// Trains `stack` in place on records of `store` against their cached CFG
/// targets. The base must be frozen and match the store's teacher and schedule.
DistillRun distill(const store::TrajectoryStore& store, const diffusion::Denoiser& base,
                   adapters::AdapterStack& stack, const DistillConfig& cfg);

struct OmegaPathwayConfig {
  std::size_t frequencies = 4;
  double scale = 0.2;
  nn::InitScheme init = nn::InitScheme::xavier;
  std::uint64_t seed = 0;
};

/// Fourier(omega) -> MLP -> embed_dim, summed into the noise-level embedding.
struct OmegaPathway {
  nn::FourierEncoder fourier;
  nn::MlpParams mlp;

  static OmegaPathway make(const OmegaPathwayConfig& cfg, std::size_t embed_dim);
  nn::Var forward(nn::Tape& t, std::span<const double> omega) const;
  void collect(std::vector<nn::Parameter*>& out);
  void collect(std::vector<const nn::Parameter*>& out) const;
};

/// Full-fine-tune guidance distillation baseline: a trainable clone of the
/// base with an omega pathway.
class GdModel {
 public:
  GdModel() = default;
  GdModel(const diffusion::Denoiser& base, const OmegaPathwayConfig& cfg);
  GdModel(diffusion::Denoiser net, OmegaPathway pathway)
      : net_(std::move(net)), pathway_(std::move(pathway)) {}

  nn::Var forward(nn::Tape& t, const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, std::span<const double> omega) const;

  [[nodiscard]] const diffusion::Denoiser& network() const { return net_; }
  [[nodiscard]] diffusion::Denoiser& mutable_network() { return net_; }
  [[nodiscard]] const OmegaPathway& pathway() const { return pathway_; }
  [[nodiscard]] OmegaPathway& mutable_pathway() { return pathway_; }

  std::vector<nn::Parameter*> parameters();
  [[nodiscard]] std::size_t parameter_count() const;

 private:
  diffusion::Denoiser net_;
  OmegaPathway pathway_;
};

class GdEpsModel final : public diffusion::EpsModel {
 public:
  explicit GdEpsModel(const GdModel& m) : m_(m) {}

 protected:
  nn::Matrix eval(const nn::Matrix& x, std::span<const double> sigma,
                  std::span<const int> classes, std::span<const double> omega) const override;

 private:
  const GdModel& m_;
};

/// Same loop and loss as distill, over every parameter of `model`.
DistillRun gd_finetune(const store::TrajectoryStore& store, const diffusion::Denoiser& base,
                       GdModel& model, const DistillConfig& cfg);

/// Mean loss_eval of `model` against the cached targets of every record.
double teacher_matching_loss(const diffusion::EpsModel& model, const store::TrajectoryStore& store,
                             const LossSpec& spec);

}  // namespace agd::distill
