// SPDX-License-Identifier: Apache-2.0
/**
 * @file   layers.hpp
 * @brief  Affine layer and single-layer unidirectional GRU, forward and
 *         backward.
 *
 * Row-vector convention throughout: y = x W + b with W shaped in x out.
 *
 * GRU recurrence for frame t (x_t and h_{t-1} are rows):
 *
 *   z_t  = sigmoid(x_t W_z + h_{t-1} U_z + b_z)          update gate
 *   r_t  = sigmoid(x_t W_r + h_{t-1} U_r + b_r)          reset gate
 *   c_t  = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)     candidate
 *   h_t  = (1 - z_t) * h_{t-1} + z_t * c_t
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "aln/errors.hpp"
#include "aln/matrix.hpp"
#include "aln/ops.hpp"
#include "aln/optim.hpp"

namespace aln {

// --- linear -----------------------------------------------------------------

inline Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.rows())
    throw DimensionError("linear: input " + x.shape_string() + " does not fit weight " +
                         w.shape_string());
  if (b.rows() != 1 || b.cols() != w.cols())
    throw DimensionError("linear: bias " + b.shape_string() + " does not fit weight " +
                         w.shape_string());
  Matrix y = matmul(x, w);
  add_row_broadcast(y, b);
  return y;
}

inline Matrix linear_forward(const Matrix& x, const ParamTensor& w, const ParamTensor& b) {
  return linear_forward(x, w.value, b.value);
}

struct LinearGrads {
  Matrix d_input;
  Matrix d_weight;
  Matrix d_bias;
};

inline LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& d_out) {
  return {matmul_nt(d_out, w), matmul_tn(x, d_out), sum_rows(d_out)};
}

// --- GRU --------------------------------------------------------------------

/// Borrowed view of the nine GRU tensors; input width = w_z.rows().
struct GruView {
  const Matrix& w_z;
  const Matrix& u_z;
  const Matrix& b_z;
  const Matrix& w_r;
  const Matrix& u_r;
  const Matrix& b_r;
  const Matrix& w_h;
  const Matrix& u_h;
  const Matrix& b_h;

  std::size_t input_width() const noexcept { return w_z.rows(); }
  std::size_t hidden() const noexcept { return u_z.rows(); }
};

struct GruGrads {
  Matrix d_input;
  Matrix d_h0;
  Matrix w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
};

/// Per-frame activations kept for the backward pass.
struct GruTrace {
  Matrix hidden;     // T x H, row t = h_t
  Matrix update;     // z_t
  Matrix reset;      // r_t
  Matrix candidate;  // c_t
  Matrix h0;
};

namespace detail {

inline void check_gru_shapes(const Matrix& seq, const GruView& p, const Matrix& h0) {
  const std::size_t in = p.input_width();
  const std::size_t h = p.hidden();
  auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* what) {
    if (m.rows() != r || m.cols() != c)
      throw DimensionError(std::string("gru: ") + what + " is " + m.shape_string() +
                           ", expected " + std::to_string(r) + "x" + std::to_string(c));
  };
  expect(p.w_z, in, h, "W_z");
  expect(p.w_r, in, h, "W_r");
  expect(p.w_h, in, h, "W_h");
  expect(p.u_z, h, h, "U_z");
  expect(p.u_r, h, h, "U_r");
  expect(p.u_h, h, h, "U_h");
  expect(p.b_z, 1, h, "b_z");
  expect(p.b_r, 1, h, "b_r");
  expect(p.b_h, 1, h, "b_h");
  expect(h0, 1, h, "h0");
  if (seq.rows() == 0) throw EmptyInputError("gru: sequence has no frames");
  if (seq.cols() != in)
    throw DimensionError("gru: input " + seq.shape_string() + " but W_z is " +
                         p.w_z.shape_string());
}

}  // namespace detail

inline GruTrace gru_forward_trace(const Matrix& seq, const GruView& p, const Matrix& h0) {
  detail::check_gru_shapes(seq, p, h0);
  const std::size_t steps = seq.rows();
  const std::size_t h = p.hidden();

  // Input projections do not depend on the recurrence; batch them over T.
  Matrix xz = linear_forward(seq, p.w_z, p.b_z);
  Matrix xr = linear_forward(seq, p.w_r, p.b_r);
  Matrix xh = linear_forward(seq, p.w_h, p.b_h);

  GruTrace tr{Matrix(steps, h), Matrix(steps, h), Matrix(steps, h), Matrix(steps, h), h0};
  Matrix prev = h0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix hz = matmul(prev, p.u_z);
    const Matrix hr = matmul(prev, p.u_r);
    Matrix rh(1, h);
    for (std::size_t j = 0; j < h; ++j) {
      tr.update(t, j) = sigmoid(xz(t, j) + hz[j]);
      tr.reset(t, j) = sigmoid(xr(t, j) + hr[j]);
      rh[j] = tr.reset(t, j) * prev[j];
    }
    const Matrix hc = matmul(rh, p.u_h);
    for (std::size_t j = 0; j < h; ++j) {
      const double c = std::tanh(xh(t, j) + hc[j]);
      const double z = tr.update(t, j);
      tr.candidate(t, j) = c;
      tr.hidden(t, j) = (1.0 - z) * prev[j] + z * c;
    }
    prev = tr.hidden.row_copy(t);
  }
  return tr;
}

/// T x H hidden states.
inline Matrix gru_forward(const Matrix& seq, const GruView& p, const Matrix& h0) {
  return gru_forward_trace(seq, p, h0).hidden;
}

/// Backpropagation through time given d(loss)/d(hidden) for every frame.
inline GruGrads gru_backward(const Matrix& seq, const GruView& p, const GruTrace& tr,
                             const Matrix& d_hidden) {
  const std::size_t steps = seq.rows();
  const std::size_t h = p.hidden();
  const std::size_t in = p.input_width();
  if (d_hidden.rows() != steps || d_hidden.cols() != h)
    throw DimensionError("gru backward: d_hidden is " + d_hidden.shape_string());

  GruGrads g{Matrix(steps, in), Matrix(1, h),    Matrix(in, h), Matrix(h, h),
             Matrix(1, h),      Matrix(in, h),   Matrix(h, h),  Matrix(1, h),
             Matrix(in, h),     Matrix(h, h),    Matrix(1, h)};

  // Gate pre-activation gradients for all frames; input-side products are
  // formed once at the end.
  Matrix da_z(steps, h), da_r(steps, h), da_h(steps, h);
  Matrix carry(1, h);  // d loss / d h_t flowing back from t+1
  for (std::size_t step = steps; step-- > 0;) {
    const Matrix prev = step == 0 ? tr.h0 : tr.hidden.row_copy(step - 1);
    Matrix dh = d_hidden.row_copy(step);
    dh += carry;

    Matrix d_prev(1, h);
    Matrix rh(1, h);
    for (std::size_t j = 0; j < h; ++j) {
      const double z = tr.update(step, j);
      const double c = tr.candidate(step, j);
      d_prev[j] = dh[j] * (1.0 - z);
      da_h(step, j) = dh[j] * z * (1.0 - c * c);
      da_z(step, j) = dh[j] * (c - prev[j]) * z * (1.0 - z);
      rh[j] = tr.reset(step, j) * prev[j];
    }
    const Matrix dah_row = da_h.row_copy(step);
    g.u_h += matmul_tn(rh, dah_row);
    const Matrix d_rh = matmul_nt(dah_row, p.u_h);
    for (std::size_t j = 0; j < h; ++j) {
      const double r = tr.reset(step, j);
      d_prev[j] += d_rh[j] * r;
      da_r(step, j) = d_rh[j] * prev[j] * r * (1.0 - r);
    }
    const Matrix daz_row = da_z.row_copy(step);
    const Matrix dar_row = da_r.row_copy(step);
    g.u_z += matmul_tn(prev, daz_row);
    g.u_r += matmul_tn(prev, dar_row);
    d_prev += matmul_nt(daz_row, p.u_z);
    d_prev += matmul_nt(dar_row, p.u_r);
    carry = std::move(d_prev);
  }
  g.d_h0 = std::move(carry);

  g.w_z = matmul_tn(seq, da_z);
  g.w_r = matmul_tn(seq, da_r);
  g.w_h = matmul_tn(seq, da_h);
  g.b_z = sum_rows(da_z);
  g.b_r = sum_rows(da_r);
  g.b_h = sum_rows(da_h);
  g.d_input = matmul_nt(da_z, p.w_z);
  g.d_input += matmul_nt(da_r, p.w_r);
  g.d_input += matmul_nt(da_h, p.w_h);
  return g;
}

}  // namespace aln
