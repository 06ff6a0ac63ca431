// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Matrix products, row softmax, pooling over frames and the two
 *         losses, each with its explicit backward rule.
 *
 * Sequences are stored frames-by-features: row t is frame t.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "aln/errors.hpp"
#include "aln/matrix.hpp"

namespace aln {

namespace detail {

inline void require_product_shapes(const Matrix& a, const Matrix& b, std::size_t inner_a,
                                   std::size_t inner_b, const char* op) {
  if (inner_a != inner_b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                         " and " + b.shape_string());
  }
}

}  // namespace detail

/// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require_product_shapes(a, b, a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.cols();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  detail::require_product_shapes(a, b, a.rows(), b.rows(), "matmul_tn");
  Matrix out(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* orow = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

/// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  detail::require_product_shapes(a, b, a.cols(), b.cols(), "matmul_nt");
  Matrix out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

/// Elementwise product.
inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("hadamard: " + a.shape_string() + " vs " + b.shape_string());
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Adds the 1 x cols row `bias` to every row of `m` in place.
inline void add_row_broadcast(Matrix& m, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != m.cols()) {
    throw DimensionError("row broadcast: bias " + bias.shape_string() + " against " +
                         m.shape_string());
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += bias[j];
  }
}

/// Column sums as a 1 x cols row.
inline Matrix sum_rows(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j);
  return out;
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- softmax --------------------------------------------------------------

/// Row-wise softmax with per-row max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
  if (m.empty()) throw EmptyInputError("softmax_rows: empty matrix");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (auto& v : o) v /= sum;
  }
  return out;
}

/// Gradient w.r.t. the scores given the softmax output and d(loss)/d(output).
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& d_probs) {
  if (!probs.same_shape(d_probs))
    throw DimensionError("softmax backward: " + probs.shape_string() + " vs " +
                         d_probs.shape_string());
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto dp = d_probs.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * dp[j];
    auto o = out.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) o[j] = p[j] * (dp[j] - dot);
  }
  return out;
}

// --- pooling over frames ----------------------------------------------------

inline Matrix mean_pool(const Matrix& seq) {
  if (seq.rows() == 0) throw EmptyInputError("mean_pool: sequence has no frames");
  Matrix out = sum_rows(seq);
  out *= 1.0 / static_cast<double>(seq.rows());
  return out;
}

/// Spreads the pooled gradient evenly over `frames` rows.
inline Matrix mean_pool_backward(const Matrix& d_pooled, std::size_t frames) {
  Matrix out(frames, d_pooled.cols());
  const double inv = 1.0 / static_cast<double>(frames);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < d_pooled.cols(); ++j) out(t, j) = d_pooled[j] * inv;
  return out;
}

struct MaxPoolResult {
  Matrix pooled;                   // 1 x cols
  std::vector<std::size_t> argmax;  // winning row per column, lowest index on ties
};

inline MaxPoolResult max_pool(const Matrix& seq) {
  if (seq.rows() == 0) throw EmptyInputError("max_pool: sequence has no frames");
  MaxPoolResult r{seq.row_copy(0), std::vector<std::size_t>(seq.cols(), 0)};
  for (std::size_t t = 1; t < seq.rows(); ++t) {
    for (std::size_t j = 0; j < seq.cols(); ++j) {
      if (seq(t, j) > r.pooled[j]) {
        r.pooled[j] = seq(t, j);
        r.argmax[j] = t;
      }
    }
  }
  return r;
}

inline Matrix max_pool_backward(const MaxPoolResult& fwd, const Matrix& d_pooled,
                                std::size_t frames) {
  Matrix out(frames, d_pooled.cols());
  for (std::size_t j = 0; j < d_pooled.cols(); ++j) out(fwd.argmax[j], j) = d_pooled[j];
  return out;
}

// --- losses -----------------------------------------------------------------

/// Mean over all elements of the squared differences.
inline double mse(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("mse: shapes " + a.shape_string() + " and " + b.shape_string());
  if (a.empty()) throw EmptyInputError("mse: empty operands");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// d mse(a, b) / d a
inline Matrix mse_grad(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("mse: shapes " + a.shape_string() + " and " + b.shape_string());
  Matrix g(a.rows(), a.cols());
  const double scale = 2.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = scale * (a[i] - b[i]);
  return g;
}

namespace detail {

inline void require_logits_label(const Matrix& logits, std::size_t label) {
  if (logits.rows() != 1 || logits.cols() == 0)
    throw DimensionError("cross_entropy: logits must be 1xK, got " + logits.shape_string());
  if (label >= logits.cols())
    throw LabelError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.cols()) + ")");
}

}  // namespace detail

/// -log softmax(logits)[label] via log-sum-exp.
inline double cross_entropy(const Matrix& logits, std::size_t label) {
  detail::require_logits_label(logits, label);
  const auto v = logits.values();
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return std::log(sum) + mx - v[label];
}

/// softmax(logits) - onehot(label)
inline Matrix cross_entropy_grad(const Matrix& logits, std::size_t label) {
  detail::require_logits_label(logits, label);
  Matrix g = softmax_rows(logits);
  g[label] -= 1.0;
  return g;
}

}  // namespace aln
