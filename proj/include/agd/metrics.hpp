#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "agd/dataset.hpp"
#include "agd/matrix.hpp"

namespace agd::eval {

/// V-statistic energy distance 2 E|a-b| - E|a-a'| - E|b-b'| between two
/// point sets stored row-major with `dim` columns. Identical inputs give 0.
double energy_distance(std::span<const double> a, std::span<const double> b, std::size_t dim);
double energy_distance_serial(std::span<const double> a, std::span<const double> b,
                              std::size_t dim);
double energy_distance(const nn::Matrix& a, const nn::Matrix& b);
double energy_distance(std::span<const diffusion::Point> a, std::span<const diffusion::Point> b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// k-NN manifold estimate: precision is the fraction of generated points that
/// fall inside some real point's k-NN ball; recall swaps the roles.
/// Throws InputError when k >= either set size.
PrecisionRecall knn_precision_recall(const nn::Matrix& gen, const nn::Matrix& real, std::size_t k);
PrecisionRecall knn_precision_recall_serial(const nn::Matrix& gen, const nn::Matrix& real,
                                            std::size_t k);

}  // namespace agd::eval
