#pragma once

#include <cstdint>

namespace agd {

/// Counter-based random stream. The n-th draw is a pure function of
/// (key, n), so streams can be split into independent children without
/// sharing state, and results do not depend on evaluation order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent child stream identified by `id`. Does not advance this stream.
  [[nodiscard]] Rng split(std::uint64_t id) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Standard normal (Box-Muller, both variates used).
  double normal();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  [[nodiscard]] std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace agd
