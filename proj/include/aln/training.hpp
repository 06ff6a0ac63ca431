// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Deterministic mini-batch training with the joint objective.
 *
 * A batch is a set of whole utterances; per-utterance gradients of
 * loss_total are summed with weight 1/batch_count and followed by one Adam
 * step, so variable-length sequences never need padding or masks. Epoch
 * order is a Fisher-Yates permutation keyed by (shuffle_seed, epoch).
 *
 * Epoch metrics average the per-utterance values observed during the
 * epoch's forward passes (losses, train accuracy, student/teacher cosine);
 * test accuracy is measured with the parameters at the end of the epoch.
 */
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aln/dataset.hpp"
#include "aln/errors.hpp"
#include "aln/model.hpp"
#include "aln/optim.hpp"
#include "aln/rng.hpp"
#include "aln/textio.hpp"

namespace aln {

struct TrainConfig {
  double alpha = 0.8;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::uint64_t shuffle_seed = 0;
  std::size_t eval_every = 1;

  void validate() const {
    require_alpha(alpha);
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (eval_every < 1) throw ValidationError("train: eval_every must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("train: learning_rate must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double mean_loss_total = 0.0;
  double mean_loss_tl = 0.0;
  double mean_loss_intent = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::optional<double> mean_student_teacher_cosine;
  double wall_time = 0.0;  // seconds; not part of the metrics file

  /// Equality of everything except wall_time.
  bool same_values(const EpochMetrics& o) const noexcept {
    return epoch == o.epoch && mean_loss_total == o.mean_loss_total &&
           mean_loss_tl == o.mean_loss_tl && mean_loss_intent == o.mean_loss_intent &&
           train_accuracy == o.train_accuracy && test_accuracy == o.test_accuracy &&
           mean_student_teacher_cosine == o.mean_student_teacher_cosine;
  }
};

/// Cosine similarity of two rows; 0 when either has zero norm.
inline double cosine(const Matrix& a, const Matrix& b) {
  if (a.size() != b.size())
    throw DimensionError("cosine: " + a.shape_string() + " vs " + b.shape_string());
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Mean over utterances of cosine(pooled student, teacher).
inline double cosine_diagnostic(const ModelParams& p, const Dataset& ds) {
  if (!p.config().has_transfer())
    throw UnsupportedVariantError("cosine diagnostic needs a transfer layer; variant " +
                                  std::string(to_string(p.config().variant)) + " has none");
  if (ds.utterances.empty()) return 0.0;
  double s = 0.0;
  for (const auto& u : ds.utterances)
    s += cosine(mean_pool(transfer_forward(u.acoustic, p)), u.teacher);
  return s / static_cast<double>(ds.utterances.size());
}

/// Fraction of utterances whose prediction equals the label.
inline double evaluate(const ModelParams& p, const Dataset& ds) {
  const auto& c = p.config();
  if (ds.d_acoustic != c.d_acoustic)
    throw ValidationError("evaluate: dataset d_acoustic " + std::to_string(ds.d_acoustic) +
                          " != model d_acoustic " + std::to_string(c.d_acoustic));
  if (ds.num_classes > c.num_classes)
    throw ValidationError("evaluate: dataset has " + std::to_string(ds.num_classes) +
                          " classes, model only " + std::to_string(c.num_classes));
  if (ds.utterances.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& u : ds.utterances)
    if (predict(u, p) == u.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(ds.utterances.size());
}

/// Training order for one epoch.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t shuffle_seed,
                                                  std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Stream s = Stream::keyed(shuffle_seed, fnv1a("shuffle"), epoch);
  for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[s.uniform_int(0, i)]);
  return perm;
}

struct BatchStats {
  double sum_loss_total = 0.0;
  double sum_loss_tl = 0.0;
  double sum_loss_intent = 0.0;
  double sum_cosine = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

/// Accumulates the batch-mean gradient of loss_total into `p` (buffers are
/// assumed zero on entry). Throws NumericFault naming the utterance when a
/// loss is not finite.
inline BatchStats accumulate_batch(ModelParams& p, std::span<const Utterance* const> batch,
                                   double alpha) {
  BatchStats st;
  st.count = batch.size();
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const Utterance* u : batch) {
    const ForwardTrace tr = accumulate_gradients(*u, p, alpha, scale);
    const auto& l = tr.losses;
    if (!std::isfinite(l.loss_total) || !std::isfinite(l.loss_tl) ||
        !std::isfinite(l.loss_intent))
      throw NumericFault("non-finite loss on utterance '" + u->id + "'");
    st.sum_loss_total += l.loss_total;
    st.sum_loss_tl += l.loss_tl;
    st.sum_loss_intent += l.loss_intent;
    if (argmax(tr.head.logits) == u->label) ++st.correct;
    if (p.config().has_transfer()) st.sum_cosine += cosine(tr.student_pooled, u->teacher);
  }
  return st;
}

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> history;
};

inline void require_compatible(const Dataset& ds, const ModelConfig& c, std::string_view what) {
  if (ds.d_acoustic != c.d_acoustic || ds.d_linguistic != c.d_linguistic ||
      ds.num_classes != c.num_classes)
    throw ValidationError(std::string(what) + " dataset is " + std::to_string(ds.d_acoustic) +
                          "/" + std::to_string(ds.d_linguistic) + "/" +
                          std::to_string(ds.num_classes) +
                          " (d_acoustic/d_linguistic/classes) but the model expects " +
                          std::to_string(c.d_acoustic) + "/" + std::to_string(c.d_linguistic) +
                          "/" + std::to_string(c.num_classes));
}

inline TrainResult train(const Dataset& train_ds, const Dataset& test_ds, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const TrainHooks& hooks = {}) {
  mcfg.validate();
  tcfg.validate();
  require_compatible(train_ds, mcfg, "training");
  require_compatible(test_ds, mcfg, "test");
  if (train_ds.utterances.empty()) throw ValidationError("training dataset is empty");
  if (tcfg.alpha == 1.0 && hooks.on_warning)
    hooks.on_warning(mcfg.variant == Variant::baseline2
                         ? "alpha = 1 on baseline2: loss_total is identically 0, nothing trains"
                         : "alpha = 1: the intent head receives no gradient");

  TrainResult result{init_model(mcfg), {}};
  ModelParams& p = result.params;
  AdamConfig adam;
  adam.learning_rate = tcfg.learning_rate;
  const bool has_student = mcfg.has_transfer();
  const std::size_t n = train_ds.utterances.size();

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto order = epoch_permutation(n, tcfg.shuffle_seed, epoch);
    BatchStats total;
    std::vector<const Utterance*> batch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += tcfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + tcfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_ds.utterances[order[i]]);
      BatchStats st;
      try {
        st = accumulate_batch(p, batch, tcfg.alpha);
        adam_step(p.tensors(), adam);
      } catch (const NumericFault& e) {
        throw NumericFault("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      total.sum_loss_total += st.sum_loss_total;
      total.sum_loss_tl += st.sum_loss_tl;
      total.sum_loss_intent += st.sum_loss_intent;
      total.sum_cosine += st.sum_cosine;
      total.correct += st.correct;
      total.count += st.count;
    }

    EpochMetrics m;
    const double cnt = static_cast<double>(total.count);
    m.epoch = epoch;
    m.mean_loss_total = total.sum_loss_total / cnt;
    m.mean_loss_tl = total.sum_loss_tl / cnt;
    m.mean_loss_intent = total.sum_loss_intent / cnt;
    m.train_accuracy = static_cast<double>(total.correct) / cnt;
    if (has_student) m.mean_student_teacher_cosine = total.sum_cosine / cnt;
    if (epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs) m.test_accuracy = evaluate(p, test_ds);
    m.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return result;
}

// --- metrics file -----------------------------------------------------------

/// One JSON record per epoch. wall_time is deliberately left out so that
/// identical runs produce byte-identical files.
inline std::string metrics_record(const EpochMetrics& m) {
  textio::ordered_json j{{"epoch", m.epoch},
                         {"mean_loss_total", m.mean_loss_total},
                         {"mean_loss_tl", m.mean_loss_tl},
                         {"mean_loss_intent", m.mean_loss_intent},
                         {"train_accuracy", m.train_accuracy}};
  auto optional = [](const std::optional<double>& v) {
    return v ? textio::ordered_json(*v) : textio::ordered_json(nullptr);
  };
  j["test_accuracy"] = optional(m.test_accuracy);
  j["mean_student_teacher_cosine"] = optional(m.mean_student_teacher_cosine);
  return j.dump();
}

inline EpochMetrics parse_metrics_record(std::string_view line, std::size_t line_no = 1) {
  const auto j = textio::parse_record(line, line_no, "<metrics>");
  EpochMetrics m;
  m.epoch = textio::field<std::size_t>(j, "epoch", line_no, "<metrics>");
  m.mean_loss_total = textio::field<double>(j, "mean_loss_total", line_no, "<metrics>");
  m.mean_loss_tl = textio::field<double>(j, "mean_loss_tl", line_no, "<metrics>");
  m.mean_loss_intent = textio::field<double>(j, "mean_loss_intent", line_no, "<metrics>");
  m.train_accuracy = textio::field<double>(j, "train_accuracy", line_no, "<metrics>");
  if (auto it = j.find("test_accuracy"); it != j.end() && !it->is_null())
    m.test_accuracy = it->get<double>();
  if (auto it = j.find("mean_student_teacher_cosine"); it != j.end() && !it->is_null())
    m.mean_student_teacher_cosine = it->get<double>();
  return m;
}

/// Appends and flushes one record per epoch, so a crash leaves a valid
/// prefix of complete lines.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open metrics file '" + path.string() + "'");
  }

  void write(const EpochMetrics& m) {
    out_ << metrics_record(m) << '\n';
    out_.flush();
    if (!out_) throw IoError("write to metrics file '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace aln
