#include "agd/metrics.hpp"

#include <string>

#include "agd/errors.hpp"
#include "agd/kernels.hpp"

namespace agd::eval {

namespace {

using SumFn = double (*)(std::span<const double>, std::span<const double>, std::size_t);

double energy_distance_with(SumFn sum, std::span<const double> a, std::span<const double> b,
                            std::size_t dim) {
  if (dim == 0 || a.empty() || b.empty() || a.size() % dim != 0 || b.size() % dim != 0) {
    throw InputError("energy_distance: both point sets must be non-empty");
  }
  const double na = static_cast<double>(a.size() / dim);
  const double nb = static_cast<double>(b.size() / dim);
  const double ab = sum(a, b, dim) / (na * nb);
  const double aa = sum(a, a, dim) / (na * na);
  const double bb = sum(b, b, dim) / (nb * nb);
  return 2.0 * ab - aa - bb;
}

using KthFn = std::vector<double> (*)(std::span<const double>, std::size_t, std::size_t);
using CountFn = std::size_t (*)(std::span<const double>, std::span<const double>,
                                std::span<const double>, std::size_t);

PrecisionRecall pr_with(KthFn kth, CountFn count, const nn::Matrix& gen, const nn::Matrix& real,
                        std::size_t k) {
  if (gen.cols() != real.cols()) throw DimensionError("knn: point dimensions differ");
  if (k == 0 || k >= gen.rows() || k >= real.rows()) {
    throw InputError("knn: k=" + std::to_string(k) + " must be positive and below both set sizes");
  }
  const std::size_t dim = gen.cols();
  const auto real_radii = kth(real.data(), dim, k);
  const auto gen_radii = kth(gen.data(), dim, k);
  PrecisionRecall pr;
  pr.precision = static_cast<double>(count(gen.data(), real.data(), real_radii, dim)) /
                 static_cast<double>(gen.rows());
  pr.recall = static_cast<double>(count(real.data(), gen.data(), gen_radii, dim)) /
              static_cast<double>(real.rows());
  return pr;
}

}  // namespace

double energy_distance(std::span<const double> a, std::span<const double> b, std::size_t dim) {
  return energy_distance_with(&kernels::pairwise_distance_sum, a, b, dim);
}

double energy_distance_serial(std::span<const double> a, std::span<const double> b,
                              std::size_t dim) {
  return energy_distance_with(&kernels::pairwise_distance_sum_serial, a, b, dim);
}

double energy_distance(const nn::Matrix& a, const nn::Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("energy_distance: point dimensions differ");
  return energy_distance(a.data(), b.data(), a.cols());
}

double energy_distance(std::span<const diffusion::Point> a, std::span<const diffusion::Point> b) {
  auto flat = [](std::span<const diffusion::Point> p) {
    std::vector<double> v;
    v.reserve(2 * p.size());
    for (const auto& q : p) {
      v.push_back(q[0]);
      v.push_back(q[1]);
    }
    return v;
  };
  const auto fa = flat(a);
  const auto fb = flat(b);
  return energy_distance(fa, fb, diffusion::kDataDim);
}

PrecisionRecall knn_precision_recall(const nn::Matrix& gen, const nn::Matrix& real,
                                     std::size_t k) {
  return pr_with(&kernels::kth_neighbor_distance, &kernels::count_in_balls, gen, real, k);
}

PrecisionRecall knn_precision_recall_serial(const nn::Matrix& gen, const nn::Matrix& real,
                                            std::size_t k) {
  return pr_with(&kernels::kth_neighbor_distance_serial, &kernels::count_in_balls_serial, gen,
                 real, k);
}

}  // namespace agd::eval
