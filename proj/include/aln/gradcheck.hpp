// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central finite-difference verification of the analytic gradients.
 *
 * The checked scalar is the batch mean of loss_total. For each tensor every
 * element is probed when the tensor has at most `max_elements` entries;
 * larger tensors are probed at `max_elements` evenly strided positions.
 * Relative error is |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aln/dataset.hpp"
#include "aln/model.hpp"

namespace aln {

struct GradcheckOptions {
  double alpha = 0.8;
  double epsilon = 1e-4;
  double tolerance = 1e-3;
  std::size_t max_elements = 200;
};

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;

  bool passed() const noexcept {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
  double max_rel_error() const noexcept {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  const GradcheckEntry* find(std::string_view name) const noexcept {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline std::vector<std::size_t> gradcheck_positions(std::size_t size, std::size_t max_elements) {
  std::vector<std::size_t> idx;
  if (size <= max_elements) {
    for (std::size_t i = 0; i < size; ++i) idx.push_back(i);
  } else {
    for (std::size_t k = 0; k < max_elements; ++k) idx.push_back(k * size / max_elements);
  }
  return idx;
}

/// Batch-mean loss_total.
inline double batch_loss(std::span<const Utterance> batch, const ModelParams& p, double alpha) {
  double s = 0.0;
  for (const auto& u : batch) s += forward(u, p, alpha).second.loss_total;
  return s / static_cast<double>(batch.size());
}

/// Fills the gradient buffers of `p` with d(batch_loss)/d(theta).
inline void batch_gradient(std::span<const Utterance> batch, ModelParams& p, double alpha) {
  p.zero_grad();
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& u : batch) accumulate_gradients(u, p, alpha, scale);
}

/// Compares the gradients produced by `analytic(params)` with central
/// differences of `loss(params)`. `analytic` must leave its result in the
/// gradient buffers. Parameter values are restored exactly afterwards.
template <typename LossFn, typename GradFn>
GradcheckReport gradcheck_with(ModelParams& p, LossFn&& loss, GradFn&& analytic,
                               const GradcheckOptions& opt) {
  GradcheckReport report{opt.tolerance, {}};
  if (opt.max_elements == 0) return report;
  analytic(p);
  std::vector<Matrix> grads;
  for (const auto& t : p.tensors()) grads.push_back(t.gradient);
  p.zero_grad();

  auto tensors = p.tensors();
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    GradcheckEntry e;
    e.name = tensors[ti].name;
    for (std::size_t i : gradcheck_positions(tensors[ti].value.size(), opt.max_elements)) {
      double& x = tensors[ti].value[i];
      const double saved = x;
      x = saved + opt.epsilon;
      const double up = loss(std::as_const(p));
      x = saved - opt.epsilon;
      const double down = loss(std::as_const(p));
      x = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double ga = grads[ti][i];
      const double rel = relative_error(ga, numeric);
      ++e.checked;
      if (e.checked == 1 || rel > e.max_rel_error) {
        e.max_rel_error = rel;
        e.worst_index = i;
        e.analytic_at_worst = ga;
        e.numeric_at_worst = numeric;
      }
    }
    e.passed = e.max_rel_error < opt.tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

inline GradcheckReport gradcheck(ModelParams& p, std::span<const Utterance> batch,
                                 const GradcheckOptions& opt = {}) {
  if (batch.empty()) throw EmptyInputError("gradcheck: empty batch");
  return gradcheck_with(
      p, [&](const ModelParams& m) { return batch_loss(batch, m, opt.alpha); },
      [&](ModelParams& m) { batch_gradient(batch, m, opt.alpha); }, opt);
}

/// The fixed tiny instance used by the gradient suite and `aln gradcheck`:
/// D_a=4, D_l=6, d_attn=4, H=5, K=3, T=3.
inline DatasetPair tiny_gradcheck_data(std::uint64_t seed = 7, std::size_t count = 3) {
  GeneratorConfig g;
  g.seed = seed;
  g.num_classes = 3;
  g.train_count = count;
  g.test_count = 3;
  g.d_acoustic = 4;
  g.d_linguistic = 6;
  g.min_len = 3;
  g.max_len = 3;
  return generate(g);
}

inline ModelConfig tiny_gradcheck_config(Variant v, std::uint64_t init_seed = 3) {
  return {v, 4, 6, 4, 5, 3, init_seed};
}

}  // namespace aln
