// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  Trainable tensors and the Adam optimizer.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>

#include "aln/errors.hpp"
#include "aln/matrix.hpp"

namespace aln {

/// A trainable matrix with its gradient accumulator and Adam moments.
struct ParamTensor {
  ParamTensor() = default;
  ParamTensor(std::string name_, Matrix value_)
      : name(std::move(name_)),
        value(std::move(value_)),
        gradient(value.rows(), value.cols()),
        adam_m(value.rows(), value.cols()),
        adam_v(value.rows(), value.cols()) {}

  void zero_grad() noexcept { gradient.fill(0.0); }

  std::string name;
  Matrix value;
  Matrix gradient;
  Matrix adam_m;
  Matrix adam_v;
};

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;

  /// learning_rate == 0 is accepted: it turns every step into a no-op, which
  /// the trainer relies on for its zero-step determinism check.
  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("adam: learning_rate must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ValidationError("adam: beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("adam: beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ValidationError("adam: epsilon must be positive");
  }
};

/// One bias-corrected Adam update over every tensor, then zeroes the
/// gradients. All gradients are checked before anything is written, so a
/// NumericFault leaves the parameters untouched.
inline void adam_step(std::span<ParamTensor> params, AdamConfig& cfg) {
  cfg.validate();
  for (const auto& p : params) {
    if (!p.gradient.all_finite())
      throw NumericFault("adam: non-finite gradient in parameter '" + p.name + "'");
  }
  ++cfg.step_count;
  const double t = static_cast<double>(cfg.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.gradient[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.adam_m[i] / bc1;
      const double v_hat = p.adam_v[i] / bc2;
      p.value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    p.zero_grad();
  }
}

}  // namespace aln
