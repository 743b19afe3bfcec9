#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agd/dataset.hpp"
#include "agd/denoiser.hpp"
#include "agd/sampler.hpp"
#include "agd/schedule.hpp"

namespace agd::store {

enum class Source { guided, diffusion };

Source parse_source(const std::string& s);
std::string to_string(Source s);

struct TrajectoryRecord {
  diffusion::Point x{};
  double sigma = 0.0;
  int cls = diffusion::kNullClass;
  double omega = 1.0;
  diffusion::Point eps_target{};
  std::uint64_t trajectory_id = 0;
  std::uint32_t step = 0;

  bool operator==(const TrajectoryRecord&) const = default;
};

struct StoreHeader {
  static constexpr std::uint16_t kVersion = 1;
  std::uint16_t version = kVersion;
  std::uint32_t data_dim = diffusion::kDataDim;
  std::uint32_t steps = 0;
  std::uint64_t trajectories = 0;
  std::uint64_t schedule_hash = 0;
  std::uint64_t teacher_hash = 0;
  std::uint64_t config_hash = 0;
  double omega_lo = 1.0;
  double omega_hi = 1.0;
  diffusion::SamplerKind kind = diffusion::SamplerKind::deterministic_euler;
  Source source = Source::guided;

  bool operator==(const StoreHeader&) const = default;
};

/// Cached distillation targets. Records are ordered by trajectory, then step.
class TrajectoryStore {
 public:
  TrajectoryStore() = default;
  TrajectoryStore(StoreHeader header, std::vector<TrajectoryRecord> records);

  [[nodiscard]] const StoreHeader& header() const { return header_; }
  StoreHeader& mutable_header() { return header_; }
  [[nodiscard]] const std::vector<TrajectoryRecord>& records() const { return records_; }
  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }

  /// FNV-1a over the serialized payload (header fields and records).
  [[nodiscard]] std::uint64_t checksum() const;

  /// Splits by trajectory id: ids with id % modulus == 0 go to the second store.
  [[nodiscard]] std::pair<TrajectoryStore, TrajectoryStore> split_holdout(
      std::uint64_t modulus) const;

  /// Records at one step index, in trajectory order.
  [[nodiscard]] std::vector<diffusion::Point> states_at(std::uint32_t step) const;

  void write(const std::filesystem::path& path) const;
  /// Throws IoError on truncation or checksum mismatch and CompatibilityError
  /// when `expected_schedule_hash` is given and differs.
  static TrajectoryStore read(const std::filesystem::path& path,
                              std::optional<std::uint64_t> expected_schedule_hash = {});

 private:
  StoreHeader header_;
  std::vector<TrajectoryRecord> records_;
};

struct GenerationOptions {
  std::size_t count = 0;
  double omega_lo = 1.0;
  double omega_hi = 1.0;
  diffusion::SamplerKind kind = diffusion::SamplerKind::deterministic_euler;
  std::uint64_t seed = 0;
  /// When set, classes cycle 0..K-1 instead of being drawn uniformly.
  bool stratified = false;
  std::uint64_t config_hash = 0;
};

/// Per-trajectory draws shared by both generators so stores built with the
/// same seed start from identical noise and use identical (class, omega).
struct TrajectoryDraw {
  std::uint64_t noise_seed = 0;
  int cls = 0;
  double omega = 1.0;
};
TrajectoryDraw draw_trajectory(const GenerationOptions& opt, int num_classes, std::size_t index);

/// Runs CFG sampling from pure noise with the frozen teacher and caches every
/// step's (x_t, sigma, c, omega, combined eps). Diverged trajectories are
/// skipped and logged. Uses exactly 2 N teacher passes per trajectory.
TrajectoryStore generate_guided_trajectories(const diffusion::Denoiser& teacher,
                                             const diffusion::NoiseSchedule& schedule,
                                             const GenerationOptions& opt);

/// Same schema, but x_t = x + sigma_j * eps for fresh data x at every grid
/// index j, with the teacher's CFG output as target.
TrajectoryStore generate_diffusion_pairs(const diffusion::Denoiser& teacher,
                                         const diffusion::ToyDataset& data,
                                         const diffusion::NoiseSchedule& schedule,
                                         const GenerationOptions& opt);

/// I.i.d. uniform draws with replacement; deterministic in `seed`.
std::vector<TrajectoryRecord> sample_minibatch(const TrajectoryStore& store, std::size_t batch,
                                               std::uint64_t seed);

/// Energy distance between the x_t marginals of the two stores at every step.
std::vector<double> trajectory_divergence(const TrajectoryStore& a, const TrajectoryStore& b);

}  // namespace agd::store
