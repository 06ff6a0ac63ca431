// SPDX-License-Identifier: Apache-2.0
/**
 * @file   evaluation.hpp
 * @brief  Alpha ablation over model variants and the teacher/student
 *         embedding export with a two-component PCA projection.
 */
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "aln/dataset.hpp"
#include "aln/model.hpp"
#include "aln/ops.hpp"
#include "aln/textio.hpp"
#include "aln/training.hpp"

namespace aln {

// --- ablation ---------------------------------------------------------------

struct AblationRow {
  Variant variant;
  std::optional<double> alpha;  // empty for baseline2, which trains on the intent loss only
  double test_accuracy;
};

struct ConfigFingerprint {
  std::optional<std::uint64_t> dataset_seed;
  std::string profile;       // "<d_acoustic>x<d_linguistic>"
  std::string train_digest;  // FNV-1a of the canonical TrainConfig text

  friend bool operator==(const ConfigFingerprint&, const ConfigFingerprint&) = default;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  ConfigFingerprint fingerprint;

  const AblationRow* find(Variant v, std::optional<double> alpha) const noexcept {
    for (const auto& r : rows)
      if (r.variant == v && r.alpha == alpha) return &r;
    return nullptr;
  }
};

inline std::string train_config_digest(const TrainConfig& t, const ModelConfig& m) {
  std::string canon = "epochs=" + std::to_string(t.epochs) +
                      ";batch_size=" + std::to_string(t.batch_size) +
                      ";learning_rate=" + textio::format_double(t.learning_rate) +
                      ";shuffle_seed=" + std::to_string(t.shuffle_seed) +
                      ";eval_every=" + std::to_string(t.eval_every) +
                      ";d_attn=" + std::to_string(m.d_attn) +
                      ";gru_hidden=" + std::to_string(m.gru_hidden) +
                      ";init_seed=" + std::to_string(m.init_seed);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
  return buf;
}

/// Trains every requested (variant, alpha) cell from a fresh initialisation
/// with identical seeds and records held-out accuracy. Model dimensions come
/// from the datasets; d_attn, gru_hidden and init_seed from `model_template`.
inline AblationReport run_ablation(const Dataset& train_ds, const Dataset& test_ds,
                                   std::span<const Variant> variants,
                                   std::span<const double> alphas, const TrainConfig& tcfg,
                                   const ModelConfig& model_template,
                                   const TrainHooks& hooks = {}) {
  AblationReport report;
  report.fingerprint.dataset_seed =
      train_ds.generator ? std::optional<std::uint64_t>(train_ds.generator->seed) : std::nullopt;
  report.fingerprint.profile =
      std::to_string(train_ds.d_acoustic) + "x" + std::to_string(train_ds.d_linguistic);
  report.fingerprint.train_digest = train_config_digest(tcfg, model_template);

  for (double a : alphas) require_alpha(a);
  std::set<Variant> unique(variants.begin(), variants.end());
  std::set<double> unique_alphas(alphas.begin(), alphas.end());

  for (Variant v : unique) {
    ModelConfig mc = model_template;
    mc.variant = v;
    mc.d_acoustic = train_ds.d_acoustic;
    mc.d_linguistic = train_ds.d_linguistic;
    mc.num_classes = train_ds.num_classes;
    if (v == Variant::baseline2) {
      TrainConfig tc = tcfg;
      tc.alpha = 0.0;
      auto res = train(train_ds, test_ds, mc, tc, hooks);
      report.rows.push_back({v, std::nullopt, evaluate(res.params, test_ds)});
      continue;
    }
    for (double a : unique_alphas) {
      TrainConfig tc = tcfg;
      tc.alpha = a;
      auto res = train(train_ds, test_ds, mc, tc, hooks);
      report.rows.push_back({v, a, evaluate(res.params, test_ds)});
    }
  }
  std::sort(report.rows.begin(), report.rows.end(), [](const auto& x, const auto& y) {
    return std::tuple(x.variant, x.alpha.value_or(-1.0)) <
           std::tuple(y.variant, y.alpha.value_or(-1.0));
  });
  return report;
}

/// Shortest text that parses back to the same double.
inline std::string shortest_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Tab-separated table: variant, alpha ("n/a" for baseline2), test_accuracy.
inline std::string ablation_table(const AblationReport& r) {
  std::string out = "variant\talpha\ttest_accuracy\n";
  for (const auto& row : r.rows) {
    out += to_string(row.variant);
    out += '\t';
    out += row.alpha ? shortest_double(*row.alpha) : std::string("n/a");
    out += '\t';
    out += shortest_double(row.test_accuracy);
    out += '\n';
  }
  return out;
}

inline std::string ablation_summary(const AblationReport& r) {
  textio::ordered_json fp{{"dataset_seed", r.fingerprint.dataset_seed
                                               ? textio::ordered_json(*r.fingerprint.dataset_seed)
                                               : textio::ordered_json(nullptr)},
                          {"profile", r.fingerprint.profile},
                          {"train_digest", r.fingerprint.train_digest}};
  auto rows = textio::ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"variant", to_string(row.variant)},
                    {"alpha", row.alpha ? textio::ordered_json(*row.alpha)
                                        : textio::ordered_json("n/a")},
                    {"test_accuracy", row.test_accuracy}});
  }
  textio::ordered_json j{{"fingerprint", fp}, {"rows", rows}};
  return j.dump(2) + "\n";
}

/// Writes `<prefix>.tsv` and `<prefix>.json`.
inline void save_ablation(const AblationReport& r, const std::filesystem::path& prefix) {
  auto tsv = prefix;
  tsv += ".tsv";
  auto js = prefix;
  js += ".json";
  textio::write_file_atomic(tsv, ablation_table(r));
  textio::write_file_atomic(js, ablation_summary(r));
}

// --- PCA --------------------------------------------------------------------

struct Pca2 {
  Matrix mean;        // 1 x D
  Matrix components;  // 2 x D, unit rows (zero rows when a direction has no variance)
  double variance[2] = {0.0, 0.0};

  /// Coordinates of one 1 x D row.
  std::pair<double, double> project(std::span<const double> x) const {
    double c[2] = {0.0, 0.0};
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t j = 0; j < x.size(); ++j) c[k] += (x[j] - mean[j]) * components(k, j);
    return {c[0], c[1]};
  }
};

/// Leading two principal directions of the rows of `x`: power iteration
/// (200 steps) on the covariance with deflation. The start vector is
/// v_j proportional to j + 1, normalised.
inline Pca2 fit_pca2(const Matrix& x, std::size_t iterations = 200) {
  if (x.rows() == 0) throw EmptyInputError("pca: no rows");
  const std::size_t d = x.cols();
  Pca2 p{mean_pool(x), Matrix(2, d), {0.0, 0.0}};
  Matrix centered = x;
  for (std::size_t i = 0; i < centered.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= p.mean[j];
  Matrix cov = matmul_tn(centered, centered);
  cov *= 1.0 / static_cast<double>(x.rows());

  for (std::size_t k = 0; k < 2; ++k) {
    Matrix v(1, d);
    double norm0 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = static_cast<double>(j + 1);
      norm0 += v[j] * v[j];
    }
    v *= 1.0 / std::sqrt(norm0);
    bool degenerate = false;
    for (std::size_t it = 0; it < iterations; ++it) {
      Matrix w = matmul(v, cov);  // cov is symmetric
      double n = 0.0;
      for (double e : w.values()) n += e * e;
      n = std::sqrt(n);
      if (n == 0.0 || !std::isfinite(n)) {
        degenerate = true;
        break;
      }
      w *= 1.0 / n;
      v = std::move(w);
    }
    if (degenerate) continue;  // component stays zero, variance 0
    const Matrix cv = matmul(v, cov);
    double lambda = 0.0;
    for (std::size_t j = 0; j < d; ++j) lambda += cv[j] * v[j];
    p.variance[k] = lambda;
    for (std::size_t j = 0; j < d; ++j) p.components(k, j) = v[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov(a, b) -= lambda * v[a] * v[b];
  }
  return p;
}

// --- embedding export ---------------------------------------------------------

/// Tab-separated rows "id label source pc1 pc2 e_0 ... e_{D-1}", a teacher
/// row then a student row per utterance, after one header line. The PCA
/// basis is fit on the joint teacher+student set, so teacher coordinates
/// change between checkpoints even on the same dataset.
inline std::string embedding_export(const ModelParams& p, const Dataset& ds) {
  if (!p.config().has_transfer())
    throw UnsupportedVariantError("embedding export needs a transfer layer; variant " +
                                  std::string(to_string(p.config().variant)) + " has none");
  require_compatible(ds, p.config(), "export");
  const std::size_t n = ds.utterances.size();
  const std::size_t d = ds.d_linguistic;
  Matrix joint(2 * n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = ds.utterances[i];
    const Matrix student = mean_pool(transfer_forward(u.acoustic, p));
    std::copy(u.teacher.values().begin(), u.teacher.values().end(), joint.row(2 * i).begin());
    std::copy(student.values().begin(), student.values().end(), joint.row(2 * i + 1).begin());
  }

  std::string out = "id\tlabel\tsource\tpc1\tpc2";
  for (std::size_t j = 0; j < d; ++j) out += "\te" + std::to_string(j);
  out += '\n';
  if (n == 0) return out;
  const Pca2 pca = fit_pca2(joint);
  for (std::size_t r = 0; r < 2 * n; ++r) {
    const auto& u = ds.utterances[r / 2];
    const auto [c1, c2] = pca.project(joint.row(r));
    out += u.id;
    out += '\t' + std::to_string(u.label);
    out += r % 2 == 0 ? "\tteacher\t" : "\tstudent\t";
    textio::append_double(out, c1);
    out += '\t';
    textio::append_double(out, c2);
    for (double e : joint.row(r)) {
      out += '\t';
      textio::append_double(out, e);
    }
    out += '\n';
  }
  return out;
}

inline void export_embeddings(const ModelParams& p, const Dataset& ds,
                              const std::filesystem::path& path) {
  textio::write_file_atomic(path, embedding_export(p, ds));
}

}  // namespace aln
