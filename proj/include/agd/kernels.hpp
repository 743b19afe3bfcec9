#pragma once

// Dense inner loops used by the tape and the metrics. Each kernel has an
// OpenMP version and a `_serial` reference. Both traverse every output
// element's reduction in the same order, so results are bit-identical
// regardless of thread count.

#include <cstddef>
#include <span>
#include <vector>

namespace agd::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_bt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// C[k x n] (+)= A[m x k]^T * B[m x n]
void gemm_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_at_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// Sum over all (i, j) of ||a_i - b_j||. Points are row-major with `dim` columns.
double pairwise_distance_sum(std::span<const double> a, std::span<const double> b,
                             std::size_t dim);
double pairwise_distance_sum_serial(std::span<const double> a, std::span<const double> b,
                                    std::size_t dim);

// Distance from each point to its k-th nearest other point in the same set.
std::vector<double> kth_neighbor_distance(std::span<const double> points, std::size_t dim,
                                          std::size_t k);
std::vector<double> kth_neighbor_distance_serial(std::span<const double> points,
                                                 std::size_t dim, std::size_t k);

// Number of queries lying inside at least one ball (ref_i, radius_i).
std::size_t count_in_balls(std::span<const double> queries, std::span<const double> refs,
                           std::span<const double> radii, std::size_t dim);
std::size_t count_in_balls_serial(std::span<const double> queries,
                                  std::span<const double> refs,
                                  std::span<const double> radii, std::size_t dim);

void set_num_threads(int threads);
int max_threads();

}  // namespace agd::kernels
