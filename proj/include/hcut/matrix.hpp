#pragma once

#include <cstddef>
#include <vector>

#include "hcut/common.hpp"

namespace hcut {

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw ShapeError("from_rows: ragged initializer");
      size_t c = 0;
      for (double v : row) m.at(r, c++) = v;
      ++r;
    }
    return m;
  }

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double at(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double* row(size_t r) { return data_.data() + r * cols_; }
  const double* row(size_t r) const { return data_.data() + r * cols_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense d0-major rank-3 tensor; houses per-layer attention weights indexed
/// as (head, query, key).
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(size_t d0, size_t d1, size_t d2, double fill = 0.0)
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

  size_t d0() const { return d0_; }
  size_t d1() const { return d1_; }
  size_t d2() const { return d2_; }

  double& at(size_t i, size_t j, size_t k) { return data_[(i * d1_ + j) * d2_ + k]; }
  double at(size_t i, size_t j, size_t k) const { return data_[(i * d1_ + j) * d2_ + k]; }

  // The (d1, d2) slice at index i, viewed as a matrix copy.
  Matrix slice(size_t i) const {
    Matrix m(d1_, d2_);
    for (size_t j = 0; j < d1_; ++j)
      for (size_t k = 0; k < d2_; ++k) m.at(j, k) = at(i, j, k);
    return m;
  }

  void set_slice(size_t i, const Matrix& m) {
    if (m.rows() != d1_ || m.cols() != d2_) throw ShapeError("set_slice: shape mismatch");
    for (size_t j = 0; j < d1_; ++j)
      for (size_t k = 0; k < d2_; ++k) at(i, j, k) = m.at(j, k);
  }

 private:
  size_t d0_ = 0;
  size_t d1_ = 0;
  size_t d2_ = 0;
  std::vector<double> data_;
};

using MaskFlags = std::vector<uint8_t>;  // 1 = valid position, 0 = masked

}  // namespace hcut
