#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ebmdiv/errors.hpp"

namespace ebmdiv {

// Dense row-major matrix of doubles. Plain value type; all training state
// is built out of these.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix zeros(std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols, 0.0);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw DimensionError("shape mismatch: " + what);
}

// out = a * b
inline void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  require_shape(a.cols() == b.rows(), "matmul inner dims");
  if (out.rows() != a.rows() || out.cols() != b.cols())
    out = Matrix(a.rows(), b.cols());
  else
    out.fill(0.0);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict oi = out.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const double s = ai[l];
      const double* __restrict bl = b.data() + l * n;
      for (std::size_t j = 0; j < n; ++j) oi[j] += s * bl[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  matmul_into(a, b, out);
  return out;
}

// out = a * b^T, with b stored n x k
inline void matmul_nt_into(const Matrix& a, const Matrix& b, Matrix& out) {
  require_shape(a.cols() == b.cols(), "matmul_nt inner dims");
  if (out.rows() != a.rows() || out.cols() != b.rows())
    out = Matrix(a.rows(), b.rows());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    double* oi = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      oi[j] = s;
    }
  }
}

// out += a^T * b, with a stored m x k and b stored m x n; out is k x n
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require_shape(a.rows() == b.rows(), "matmul_tn outer dims");
  require_shape(out.rows() == a.cols() && out.cols() == b.cols(),
                "matmul_tn output dims");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    const double* __restrict bi = b.data() + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double s = ai[l];
      double* __restrict ol = out.data() + l * n;
      for (std::size_t j = 0; j < n; ++j) ol[j] += s * bi[j];
    }
  }
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "dot lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace ebmdiv
