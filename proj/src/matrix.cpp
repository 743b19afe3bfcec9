#include "agd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agd/errors.hpp"
#include "agd/kernels.hpp"

namespace agd::nn {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != data_.size()) throw DimensionError("reshape changes element count");
  return Matrix(rows, cols, data_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " by " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  kernels::gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DimensionError("softmax_attention: incompatible Q/K/V shapes");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix out(q.rows(), v.cols());
  std::vector<double> p(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < q.cols(); ++d) s += q(i, d) * k(j, d);
      p[j] = s * inv_sqrt_d;
      mx = std::max(mx, p[j]);
    }
    double z = 0.0;
    for (double& pj : p) {
      pj = std::exp(pj - mx);
      z += pj;
    }
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const double w = p[j] / z;
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += w * v(j, c);
    }
  }
  return out;
}

}  // namespace agd::nn
