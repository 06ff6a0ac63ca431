// SPDX-License-Identifier: Apache-2.0
/**
 * @file   matrix.hpp
 * @brief  Dense row-major matrix of doubles.
 *
 * Every vector quantity in the network is a Matrix as well: a single frame
 * or a pooled embedding is a 1 x D row.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aln/errors.hpp"

namespace aln {

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  static Matrix row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(1, n, std::move(values));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Matrix row_copy(std::size_t r) const {
    auto src = row(r);
    return Matrix(1, cols_, std::vector<double>(src.begin(), src.end()));
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  void fill(double v) noexcept {
    for (auto& x : data_) x = v;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Matrix& operator*=(double s) noexcept {
    for (auto& x : data_) x *= s;
    return *this;
  }

  /// this += s * o
  Matrix& add_scaled(const Matrix& o, double s) {
    require_same_shape(o, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    return *this;
  }

  bool all_finite() const noexcept {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  /// Exact, bitwise-value comparison (NaN never equal).
  friend bool operator==(const Matrix& a, const Matrix& b) noexcept {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void require_same_shape(const Matrix& o, std::string_view op) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string(op) + ": shapes " + shape_string() + " and " +
                           o.shape_string() + " differ");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

/// Throws ValidationError naming `what` if any entry is NaN or infinite.
inline void require_finite(const Matrix& m, std::string_view what) {
  if (!m.all_finite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace aln
