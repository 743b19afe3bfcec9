#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "agd/matrix.hpp"
#include "agd/rng.hpp"

namespace agd::diffusion {

inline constexpr std::size_t kDataDim = 2;
using Point = std::array<double, kDataDim>;

/// Class id used for the null condition.
inline constexpr int kNullClass = -1;

struct Gaussian2 {
  Point mean{};
  std::array<double, 4> cov{};  // row-major 2x2, symmetric positive definite
  double weight = 1.0;
};

struct ClassMixture {
  std::vector<Gaussian2> components;
};

/// Layout of the default dataset: `classes` pairs of blobs evenly spaced on a
/// circle. Each class has an isotropic component (weight 0.6) and an
/// elongated one (weight 0.4) separated tangentially by `spread`.
struct RingSpec {
  int classes = 8;
  double radius = 3.0;
  double spread = 0.8;
  double std = 0.3;
};

/// Class-conditional 2-D Gaussian mixtures with closed-form noisy marginals.
class ToyDataset {
 public:
  explicit ToyDataset(std::vector<ClassMixture> classes);

  static ToyDataset ring(const RingSpec& spec);
  static ToyDataset single_gaussian(Point mean, double std);

  [[nodiscard]] int class_count() const { return static_cast<int>(classes_.size()); }
  [[nodiscard]] const ClassMixture& mixture(int c) const;

  /// Draw from class `c`, or from the class-marginal (uniform class prior)
  /// when c is kNullClass.
  Point sample(int c, Rng& rng) const;
  nn::Matrix sample_many(int c, std::size_t n, Rng& rng) const;

  /// log p_sigma(x | c) where p_sigma = p_data convolved with N(0, sigma^2 I).
  [[nodiscard]] double log_density(const Point& x, double sigma, int c) const;
  /// Exact grad_x log p_sigma(x | c).
  [[nodiscard]] Point score(const Point& x, double sigma, int c) const;

 private:
  // (weight, component) pairs making up p(x | c); the null class spans all.
  [[nodiscard]] std::vector<std::pair<double, const Gaussian2*>> components_for(int c) const;

  std::vector<ClassMixture> classes_;
};

Point analytic_score(const ToyDataset& data, const Point& x, double sigma, int c);

}  // namespace agd::diffusion
