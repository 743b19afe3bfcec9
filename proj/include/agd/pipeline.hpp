#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "agd/adapters.hpp"
#include "agd/config.hpp"
#include "agd/dataset.hpp"
#include "agd/distill.hpp"
#include "agd/evaluation.hpp"
#include "agd/schedule.hpp"
#include "agd/train_base.hpp"
#include "agd/trajectory_store.hpp"

namespace agd::pipeline {

struct Setup {
  config::Experiment exp;
  diffusion::ToyDataset data;
  diffusion::NoiseSchedule schedule;
};

Setup make_setup(const config::Config& cfg);

/// Trains the base and freezes it.
diffusion::BaseTrainResult train_base(const Setup& s);

/// Throws CompatibilityError when the base was trained under another schedule.
void check_schedule(const Setup& s, const diffusion::Denoiser& base);

/// Builds the store selected by trajectories.source. The base must be frozen.
store::TrajectoryStore generate_store(const Setup& s, const diffusion::Denoiser& base,
                                      store::Source source);

/// Training and held-out parts of a store.
std::pair<store::TrajectoryStore, store::TrajectoryStore> split(const Setup& s,
                                                                const store::TrajectoryStore& st);

struct AgdResult {
  adapters::AdapterStack stack;
  distill::DistillRun run;
  double heldout_loss = 0.0;
};
/// Distills adapters on the training split; the held-out loss uses the rest.
AgdResult run_agd(const Setup& s, const diffusion::Denoiser& base, const store::TrajectoryStore& st,
                  const adapters::AdapterConfig& adapter_cfg);

struct GdResult {
  distill::GdModel model;
  distill::DistillRun run;
  double heldout_loss = 0.0;
};
GdResult run_gd(const Setup& s, const diffusion::Denoiser& base, const store::TrajectoryStore& st);

struct EvalInputs {
  const diffusion::Denoiser* base = nullptr;
  const adapters::AdapterStack* stack = nullptr;  // optional
  const distill::GdModel* gd = nullptr;           // optional
  /// Only the teacher row; skips transfer and divergence.
  bool teacher_only = false;
};

inline const std::string kUnguided = "unguided";
inline const std::string kAgd = "agd";
inline const std::string kGd = "gd_baseline";

/// Summary at eval.report_omega over eval.endpoint_seeds paired seeds, the
/// guidance sweep, scheduler transfer (with adapters) and the per-step
/// divergence between guided and unguided teacher trajectories.
eval::EvalReport evaluate(const Setup& s, const EvalInputs& in);

struct AblationRow {
  std::string variant;
  std::size_t trainable_parameters = 0;
  double parameter_ratio = 0.0;
  double heldout_loss = 0.0;
  double endpoint_mse = 0.0;           // vs teacher at eval.report_omega
  double unguided_endpoint_mse = 0.0;  // conditional base vs teacher, same seeds
};

/// Distills every adapter architecture on one store.
std::vector<AblationRow> ablate_architectures(const Setup& s, const diffusion::Denoiser& base,
                                              const store::TrajectoryStore& st);
/// Distills the configured adapters on a guided and a diffusion store.
std::vector<AblationRow> ablate_source(const Setup& s, const diffusion::Denoiser& base);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_text(const std::vector<AblationRow>& rows);

/// Throws CompatibilityError naming the first artifact whose hash differs from
/// `expected`, unless `force` is set.
void require_hashes(const std::vector<std::pair<std::string, std::uint64_t>>& artifacts,
                    std::uint64_t expected, bool force);

}  // namespace agd::pipeline
