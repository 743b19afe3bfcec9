#include "agd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <omp.h>

namespace agd::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 16;

inline void gemm_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                     std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  std::size_t p = 0;
  // Four rank-1 updates per pass; each c_row[j] still accumulates in p order.
  for (; p + 4 <= k; p += 4) {
    const double a0 = a_row[p], a1 = a_row[p + 1], a2 = a_row[p + 2], a3 = a_row[p + 3];
    const double* __restrict b0 = b + p * n;
    const double* __restrict b1 = b0 + n;
    const double* __restrict b2 = b1 + n;
    const double* __restrict b3 = b2 + n;
    double* __restrict c = c_row;
    for (std::size_t j = 0; j < n; ++j) {
      c[j] = (((c[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
    }
  }
  for (; p < k; ++p) {
    const double aip = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
  }
}

// Row i of A * B^T, given B^T already materialised as `bt` (k x n). The
// product is formed in `scratch` so accumulation adds one finished sum.
inline void gemm_bt_row(const double* a_row, const double* bt, double* c_row, double* scratch,
                        std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) {
    gemm_row(a_row, bt, c_row, k, n, false);
    return;
  }
  gemm_row(a_row, bt, scratch, k, n, false);
  for (std::size_t j = 0; j < n; ++j) c_row[j] += scratch[j];
}

std::vector<double> transpose(std::span<const double> b, std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  return bt;
}

inline void gemm_at_row(const double* a, const double* b, double* c_row, std::size_t p,
                        std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double a0 = a[i * k + p], a1 = a[(i + 1) * k + p];
    const double a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
    const double* __restrict b0 = b + i * n;
    const double* __restrict b1 = b0 + n;
    const double* __restrict b2 = b1 + n;
    const double* __restrict b3 = b2 + n;
    double* __restrict c = c_row;
    for (std::size_t j = 0; j < n; ++j) {
      c[j] = (((c[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
    }
  }
  for (; i < m; ++i) {
    const double aip = a[i * k + p];
    const double* b_row = b + i * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
  }
}

inline double dist(const double* x, const double* y, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double diff = x[d] - y[d];
    s += diff * diff;
  }
  return std::sqrt(s);
}

inline double row_distance_sum(const double* x, std::span<const double> b, std::size_t dim) {
  const std::size_t m = b.size() / dim;
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) s += dist(x, b.data() + j * dim, dim);
  return s;
}

// k-th smallest distance from point i to the other points.
double kth_distance(std::span<const double> points, std::size_t dim, std::size_t i,
                    std::size_t k, std::vector<double>& scratch) {
  const std::size_t n = points.size() / dim;
  scratch.clear();
  const double* x = points.data() + i * dim;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    scratch.push_back(dist(x, points.data() + j * dim, dim));
  }
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   scratch.end());
  return scratch[k - 1];
}

inline bool in_any_ball(const double* q, std::span<const double> refs,
                        std::span<const double> radii, std::size_t dim) {
  for (std::size_t j = 0; j < radii.size(); ++j) {
    if (dist(q, refs.data() + j * dim, dim) <= radii[j]) return true;
  }
  return false;
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::int64_t i = 0; i < rows; ++i) {
    gemm_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
  }
}

void gemm_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    gemm_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
  }
}

void gemm_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::vector<double> bt = transpose(b, n, k);
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel if (m * k * n > kParallelWork)
  {
    std::vector<double> scratch(accumulate ? n : 0);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i) {
      gemm_bt_row(a.data() + i * k, bt.data(), c.data() + i * n, scratch.data(), k, n,
                  accumulate);
    }
  }
}

void gemm_bt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::vector<double> bt = transpose(b, n, k);
  std::vector<double> scratch(accumulate ? n : 0);
  for (std::size_t i = 0; i < m; ++i) {
    gemm_bt_row(a.data() + i * k, bt.data(), c.data() + i * n, scratch.data(), k, n,
                accumulate);
  }
}

void gemm_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto out_rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::int64_t p = 0; p < out_rows; ++p) {
    gemm_at_row(a.data(), b.data(), c.data() + p * n, static_cast<std::size_t>(p), m, k, n,
                accumulate);
  }
}

void gemm_at_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p) {
    gemm_at_row(a.data(), b.data(), c.data() + p * n, p, m, k, n, accumulate);
  }
}

double pairwise_distance_sum(std::span<const double> a, std::span<const double> b,
                             std::size_t dim) {
  const auto n = static_cast<std::int64_t>(a.size() / dim);
  std::vector<double> partial(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    partial[static_cast<std::size_t>(i)] = row_distance_sum(a.data() + i * dim, b, dim);
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return s;
}

double pairwise_distance_sum_serial(std::span<const double> a, std::span<const double> b,
                                    std::size_t dim) {
  const std::size_t n = a.size() / dim;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += row_distance_sum(a.data() + i * dim, b, dim);
  return s;
}

std::vector<double> kth_neighbor_distance(std::span<const double> points, std::size_t dim,
                                          std::size_t k) {
  const auto n = static_cast<std::int64_t>(points.size() / dim);
  std::vector<double> out(static_cast<std::size_t>(n));
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)] =
          kth_distance(points, dim, static_cast<std::size_t>(i), k, scratch);
    }
  }
  return out;
}

std::vector<double> kth_neighbor_distance_serial(std::span<const double> points,
                                                 std::size_t dim, std::size_t k) {
  const std::size_t n = points.size() / dim;
  std::vector<double> out(n);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < n; ++i) out[i] = kth_distance(points, dim, i, k, scratch);
  return out;
}

std::size_t count_in_balls(std::span<const double> queries, std::span<const double> refs,
                           std::span<const double> radii, std::size_t dim) {
  const auto n = static_cast<std::int64_t>(queries.size() / dim);
  std::size_t count = 0;
#pragma omp parallel for schedule(dynamic, 64) reduction(+ : count)
  for (std::int64_t i = 0; i < n; ++i) {
    if (in_any_ball(queries.data() + i * dim, refs, radii, dim)) ++count;
  }
  return count;
}

std::size_t count_in_balls_serial(std::span<const double> queries,
                                  std::span<const double> refs,
                                  std::span<const double> radii, std::size_t dim) {
  const std::size_t n = queries.size() / dim;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (in_any_ball(queries.data() + i * dim, refs, radii, dim)) ++count;
  }
  return count;
}

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace agd::kernels
