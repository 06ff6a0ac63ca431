// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  The three intent classifiers over acoustic frame embeddings:
 *
 *   baseline2       acoustic -> intent head
 *   aln_linguistic  acoustic -> transfer layer -> intent head
 *   aln             acoustic -> transfer layer -> mapping -> cross-attention
 *                   (acoustic queries, mapped student keys/values) -> intent head
 *
 * The intent head is GRU -> max-pool over frames -> linear. The transfer
 * layer is distilled against the pooled teacher embedding with an MSE loss,
 * and the joint objective is
 *
 *   loss_total = alpha * loss_tl + (1 - alpha) * loss_intent.
 *
 * Backward passes are written out layer by layer for this fixed graph.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aln/dataset.hpp"
#include "aln/errors.hpp"
#include "aln/layers.hpp"
#include "aln/matrix.hpp"
#include "aln/ops.hpp"
#include "aln/optim.hpp"
#include "aln/rng.hpp"

namespace aln {

enum class Variant { baseline2, aln_linguistic, aln };

inline std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::baseline2:
      return "baseline2";
    case Variant::aln_linguistic:
      return "aln_linguistic";
    case Variant::aln:
      return "aln";
  }
  return "?";
}

/// Accepts both "aln_linguistic" and the CLI spelling "aln-linguistic".
inline Variant parse_variant(std::string_view s) {
  if (s == "baseline2") return Variant::baseline2;
  if (s == "aln_linguistic" || s == "aln-linguistic") return Variant::aln_linguistic;
  if (s == "aln") return Variant::aln;
  throw ValidationError("unknown model variant '" + std::string(s) + "'");
}

struct ModelConfig {
  Variant variant = Variant::aln;
  std::size_t d_acoustic = 256;
  std::size_t d_linguistic = 768;
  std::size_t d_attn = 256;
  std::size_t gru_hidden = 128;
  std::size_t num_classes = 8;
  std::uint64_t init_seed = 0;

  static ModelConfig small_profile(Variant v, std::size_t classes = 8) {
    return {v, 32, 96, 32, 32, classes, 0};
  }

  bool has_transfer() const noexcept { return variant != Variant::baseline2; }
  bool has_attention() const noexcept { return variant == Variant::aln; }
  /// A mapping layer is placed on any attention input whose width != d_attn.
  bool maps_linguistic() const noexcept { return has_attention() && d_linguistic != d_attn; }
  bool maps_acoustic() const noexcept { return has_attention() && d_acoustic != d_attn; }

  std::size_t head_input_width() const noexcept {
    switch (variant) {
      case Variant::baseline2:
        return d_acoustic;
      case Variant::aln_linguistic:
        return d_linguistic;
      case Variant::aln:
        return d_attn;
    }
    return 0;
  }

  void validate() const {
    if (d_acoustic < 1 || d_linguistic < 1 || d_attn < 1 || gru_hidden < 1 || num_classes < 1)
      throw ValidationError("model config: all dimensions must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorSpec {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  bool is_bias;
};

/// Names and shapes of every trainable tensor of a configuration, in the
/// order they are stored and checkpointed.
inline std::vector<TensorSpec> parameter_layout(const ModelConfig& c) {
  std::vector<TensorSpec> out;
  auto affine = [&](const std::string& prefix, std::size_t in, std::size_t o) {
    out.push_back({prefix + ".w", in, o, false});
    out.push_back({prefix + ".b", 1, o, true});
  };
  if (c.has_transfer()) affine("transfer", c.d_acoustic, c.d_linguistic);
  if (c.maps_linguistic()) affine("map", c.d_linguistic, c.d_attn);
  if (c.maps_acoustic()) affine("query_map", c.d_acoustic, c.d_attn);
  if (c.has_attention()) {
    affine("attn.q", c.d_attn, c.d_attn);
    affine("attn.k", c.d_attn, c.d_attn);
    affine("attn.v", c.d_attn, c.d_attn);
  }
  const std::size_t in = c.head_input_width();
  const std::size_t h = c.gru_hidden;
  for (const char* gate : {"z", "r", "h"}) {
    out.push_back({std::string("gru.w_") + gate, in, h, false});
    out.push_back({std::string("gru.u_") + gate, h, h, false});
    out.push_back({std::string("gru.b_") + gate, 1, h, true});
  }
  affine("head", h, c.num_classes);
  return out;
}

class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelConfig cfg, std::vector<ParamTensor> tensors)
      : config_(cfg), tensors_(std::move(tensors)) {
    const auto layout = parameter_layout(config_);
    if (layout.size() != tensors_.size())
      throw ValidationError("model params: expected " + std::to_string(layout.size()) +
                            " tensors for variant " + std::string(to_string(cfg.variant)) +
                            ", got " + std::to_string(tensors_.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& t = tensors_[i];
      if (t.name != layout[i].name || t.value.rows() != layout[i].rows ||
          t.value.cols() != layout[i].cols)
        throw ValidationError("model params: tensor " + std::to_string(i) + " is '" + t.name +
                              "' " + t.value.shape_string() + ", expected '" + layout[i].name +
                              "' " + std::to_string(layout[i].rows) + "x" +
                              std::to_string(layout[i].cols));
    }
  }

  const ModelConfig& config() const noexcept { return config_; }

  std::span<ParamTensor> tensors() noexcept { return tensors_; }
  std::span<const ParamTensor> tensors() const noexcept { return tensors_; }

  bool has(std::string_view name) const noexcept { return find(name) != nullptr; }

  const ParamTensor* find(std::string_view name) const noexcept {
    for (const auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }
  ParamTensor* find(std::string_view name) noexcept {
    for (auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }

  const ParamTensor& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw UnsupportedVariantError("variant " + std::string(to_string(config_.variant)) +
                                  " has no parameter '" + std::string(name) + "'");
  }
  ParamTensor& at(std::string_view name) {
    return const_cast<ParamTensor&>(std::as_const(*this).at(name));
  }

  const Matrix& value(std::string_view name) const { return at(name).value; }

  void zero_grad() noexcept {
    for (auto& t : tensors_) t.zero_grad();
  }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.value.size();
    return n;
  }

  GruView gru() const {
    return {value("gru.w_z"), value("gru.u_z"), value("gru.b_z"),
            value("gru.w_r"), value("gru.u_r"), value("gru.b_r"),
            value("gru.w_h"), value("gru.u_h"), value("gru.b_h")};
  }

  /// Same configuration and bit-identical parameter values.
  friend bool same_values(const ModelParams& a, const ModelParams& b) {
    if (!(a.config_ == b.config_) || a.tensors_.size() != b.tensors_.size()) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i)
      if (a.tensors_[i].name != b.tensors_[i].name || !(a.tensors_[i].value == b.tensors_[i].value))
        return false;
    return true;
  }

 private:
  ModelConfig config_;
  std::vector<ParamTensor> tensors_;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Each tensor draws from its own stream keyed by (init_seed, name).
inline ModelParams init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamTensor> tensors;
  for (const auto& spec : parameter_layout(cfg)) {
    Matrix m(spec.rows, spec.cols);
    if (!spec.is_bias) {
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
      Stream s = Stream::keyed(cfg.init_seed, fnv1a(spec.name));
      for (auto& v : m.values()) v = (2.0 * s.uniform() - 1.0) * bound;
    }
    tensors.emplace_back(spec.name, std::move(m));
  }
  return ModelParams(cfg, std::move(tensors));
}

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// --- losses -----------------------------------------------------------------

struct LossBreakdown {
  double loss_tl = 0.0;
  double loss_intent = 0.0;
  double loss_total = 0.0;
  double alpha = 0.0;
};

inline void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha must lie in [0,1], got " + std::to_string(alpha));
}

inline LossBreakdown combine_losses(double loss_tl, double loss_intent, double alpha) {
  require_alpha(alpha);
  return {loss_tl, loss_intent, alpha * loss_tl + (1.0 - alpha) * loss_intent, alpha};
}

struct DistillationLoss {
  double loss_tl;
  Matrix student_pooled;
};

/// Mean-pools the student frames and compares them with the teacher.
inline DistillationLoss compute_loss_tl(const Matrix& student_seq, const Matrix& teacher) {
  if (teacher.rows() != 1 || student_seq.cols() != teacher.cols())
    throw DimensionError("distillation: student width " + std::to_string(student_seq.cols()) +
                         " vs teacher " + teacher.shape_string());
  Matrix pooled = mean_pool(student_seq);
  const double loss = mse(teacher, pooled);
  return {loss, std::move(pooled)};
}

// --- layer-level forward ops ------------------------------------------------

namespace detail {

inline void require_variant(const ModelParams& p, bool ok, std::string_view what) {
  if (!ok)
    throw UnsupportedVariantError(std::string(what) + " is not available for variant " +
                                  std::string(to_string(p.config().variant)));
}

inline void require_acoustic_width(const Matrix& acoustic, const ModelConfig& c) {
  if (acoustic.cols() != c.d_acoustic)
    throw DimensionError("acoustic width " + std::to_string(acoustic.cols()) +
                         " != model d_acoustic " + std::to_string(c.d_acoustic));
  if (acoustic.rows() == 0) throw EmptyInputError("acoustic sequence has no frames");
}

}  // namespace detail

/// Student sequence: one linear map per frame, frame count preserved.
inline Matrix transfer_forward(const Matrix& acoustic, const ModelParams& p) {
  detail::require_variant(p, p.config().has_transfer(), "transfer layer");
  detail::require_acoustic_width(acoustic, p.config());
  return linear_forward(acoustic, p.at("transfer.w"), p.at("transfer.b"));
}

/// Everything the attention backward pass needs.
struct AttentionTrace {
  Matrix query_in;  // acoustic, or its mapped version
  Matrix keys_in;   // mapped student sequence
  Matrix q, k, v;
  Matrix weights;   // T x T, row-stochastic
  Matrix fused;     // T x d_attn
};

inline AttentionTrace cross_attention_trace(const Matrix& acoustic, const Matrix& student_seq,
                                            const ModelParams& p) {
  const auto& c = p.config();
  detail::require_variant(p, c.has_attention(), "cross-attention");
  detail::require_acoustic_width(acoustic, c);
  if (acoustic.rows() != student_seq.rows())
    throw AlignmentError("cross-attention: acoustic has " + std::to_string(acoustic.rows()) +
                         " frames but the student sequence has " +
                         std::to_string(student_seq.rows()));
  if (student_seq.cols() != c.d_linguistic)
    throw DimensionError("cross-attention: student width " + std::to_string(student_seq.cols()) +
                         " != d_linguistic " + std::to_string(c.d_linguistic));

  AttentionTrace tr;
  tr.query_in = c.maps_acoustic()
                    ? linear_forward(acoustic, p.at("query_map.w"), p.at("query_map.b"))
                    : acoustic;
  tr.keys_in = c.maps_linguistic() ? linear_forward(student_seq, p.at("map.w"), p.at("map.b"))
                                   : student_seq;
  tr.q = linear_forward(tr.query_in, p.at("attn.q.w"), p.at("attn.q.b"));
  tr.k = linear_forward(tr.keys_in, p.at("attn.k.w"), p.at("attn.k.b"));
  tr.v = linear_forward(tr.keys_in, p.at("attn.v.w"), p.at("attn.v.b"));
  Matrix scores = matmul_nt(tr.q, tr.k);
  scores *= 1.0 / std::sqrt(static_cast<double>(c.d_attn));
  tr.weights = softmax_rows(scores);
  tr.fused = matmul(tr.weights, tr.v);
  return tr;
}

struct CrossAttentionOutput {
  Matrix fused;
  Matrix attention_weights;
};

/// Single-head scaled dot-product attention: acoustic frames query the
/// mapped student frames.
inline CrossAttentionOutput cross_attention(const Matrix& acoustic, const Matrix& student_seq,
                                            const ModelParams& p) {
  auto tr = cross_attention_trace(acoustic, student_seq, p);
  return {std::move(tr.fused), std::move(tr.weights)};
}

struct IntentHeadTrace {
  GruTrace gru;
  MaxPoolResult pooled;
  Matrix logits;
};

inline IntentHeadTrace intent_head_trace(const Matrix& seq, const ModelParams& p) {
  const auto& c = p.config();
  if (seq.cols() != c.head_input_width())
    throw DimensionError("intent head: input width " + std::to_string(seq.cols()) +
                         " != expected " + std::to_string(c.head_input_width()));
  IntentHeadTrace tr{gru_forward_trace(seq, p.gru(), Matrix(1, c.gru_hidden)), {}, {}};
  tr.pooled = max_pool(tr.gru.hidden);
  tr.logits = linear_forward(tr.pooled.pooled, p.at("head.w"), p.at("head.b"));
  return tr;
}

/// GRU from a zero state, max-pool over time, linear to K logits.
inline Matrix intent_head(const Matrix& seq, const ModelParams& p) {
  return intent_head_trace(seq, p).logits;
}

// --- whole-model forward / backward ------------------------------------------

struct ForwardOutput {
  Matrix logits;                          // 1 x K
  std::optional<Matrix> student_pooled;   // 1 x d_linguistic
  std::optional<Matrix> fused;            // T x d_attn
  std::optional<Matrix> attention_weights;  // T x T
};

/// Full activation record of one utterance.
struct ForwardTrace {
  Matrix student;  // T x d_linguistic (empty for baseline2)
  Matrix student_pooled;
  std::optional<AttentionTrace> attention;
  IntentHeadTrace head;
  LossBreakdown losses;
};

namespace detail {

inline void require_utterance(const Utterance& u, const ModelConfig& c) {
  if (u.acoustic.cols() != c.d_acoustic)
    throw DimensionError("utterance '" + u.id + "': acoustic width " +
                         std::to_string(u.acoustic.cols()) + " != model d_acoustic " +
                         std::to_string(c.d_acoustic));
  if (u.acoustic.rows() == 0) throw EmptyInputError("utterance '" + u.id + "' has no frames");
  if (c.has_transfer() && (u.teacher.rows() != 1 || u.teacher.cols() != c.d_linguistic))
    throw DimensionError("utterance '" + u.id + "': teacher " + u.teacher.shape_string() +
                         " != model d_linguistic " + std::to_string(c.d_linguistic));
  if (u.label >= c.num_classes)
    throw LabelError("utterance '" + u.id + "': label " + std::to_string(u.label) +
                     " outside [0, " + std::to_string(c.num_classes) + ")");
}

}  // namespace detail

inline ForwardTrace forward_trace(const Utterance& utt, const ModelParams& p, double alpha) {
  require_alpha(alpha);
  const auto& c = p.config();
  detail::require_utterance(utt, c);

  ForwardTrace tr;
  double loss_tl = 0.0;
  const Matrix* head_in = &utt.acoustic;
  if (c.has_transfer()) {
    tr.student = transfer_forward(utt.acoustic, p);
    auto d = compute_loss_tl(tr.student, utt.teacher);
    loss_tl = d.loss_tl;
    tr.student_pooled = std::move(d.student_pooled);
    head_in = &tr.student;
  }
  if (c.has_attention()) {
    tr.attention = cross_attention_trace(utt.acoustic, tr.student, p);
    head_in = &tr.attention->fused;
  }
  tr.head = intent_head_trace(*head_in, p);
  tr.losses = combine_losses(loss_tl, cross_entropy(tr.head.logits, utt.label), alpha);
  return tr;
}

inline std::pair<ForwardOutput, LossBreakdown> forward(const Utterance& utt, const ModelParams& p,
                                                       double alpha) {
  auto tr = forward_trace(utt, p, alpha);
  ForwardOutput out{std::move(tr.head.logits), std::nullopt, std::nullopt, std::nullopt};
  if (p.config().has_transfer()) out.student_pooled = std::move(tr.student_pooled);
  if (tr.attention) {
    out.fused = std::move(tr.attention->fused);
    out.attention_weights = std::move(tr.attention->weights);
  }
  return {std::move(out), tr.losses};
}

/// Adds `scale` * d(loss_total)/d(theta) for one utterance into the
/// gradient buffers of `p` and returns the forward activations.
inline ForwardTrace accumulate_gradients(const Utterance& utt, ModelParams& p, double alpha,
                                         double scale = 1.0) {
  ForwardTrace tr = forward_trace(utt, p, alpha);
  const auto& c = p.config();
  const std::size_t frames = utt.frames();
  auto add = [&](std::string_view name, const Matrix& g) {
    p.at(name).gradient.add_scaled(g, scale);
  };

  // intent head
  Matrix d_logits = cross_entropy_grad(tr.head.logits, utt.label);
  d_logits *= (1.0 - alpha);
  const auto head = linear_backward(tr.head.pooled.pooled, p.value("head.w"), d_logits);
  add("head.w", head.d_weight);
  add("head.b", head.d_bias);
  const Matrix d_hidden = max_pool_backward(tr.head.pooled, head.d_input, frames);

  const Matrix* head_in = &utt.acoustic;
  if (tr.attention) head_in = &tr.attention->fused;
  else if (c.has_transfer()) head_in = &tr.student;
  const auto gru = gru_backward(*head_in, p.gru(), tr.head.gru, d_hidden);
  add("gru.w_z", gru.w_z);
  add("gru.u_z", gru.u_z);
  add("gru.b_z", gru.b_z);
  add("gru.w_r", gru.w_r);
  add("gru.u_r", gru.u_r);
  add("gru.b_r", gru.b_r);
  add("gru.w_h", gru.w_h);
  add("gru.u_h", gru.u_h);
  add("gru.b_h", gru.b_h);

  if (!c.has_transfer()) return tr;

  Matrix d_student;
  if (tr.attention) {
    const auto& at = *tr.attention;
    const Matrix& d_fused = gru.d_input;
    const Matrix d_weights = matmul_nt(d_fused, at.v);
    const Matrix d_v = matmul_tn(at.weights, d_fused);
    Matrix d_scores = softmax_rows_backward(at.weights, d_weights);
    d_scores *= 1.0 / std::sqrt(static_cast<double>(c.d_attn));
    const Matrix d_q = matmul(d_scores, at.k);
    const Matrix d_k = matmul_tn(d_scores, at.q);

    const auto q = linear_backward(at.query_in, p.value("attn.q.w"), d_q);
    const auto k = linear_backward(at.keys_in, p.value("attn.k.w"), d_k);
    const auto v = linear_backward(at.keys_in, p.value("attn.v.w"), d_v);
    add("attn.q.w", q.d_weight);
    add("attn.q.b", q.d_bias);
    add("attn.k.w", k.d_weight);
    add("attn.k.b", k.d_bias);
    add("attn.v.w", v.d_weight);
    add("attn.v.b", v.d_bias);
    if (c.maps_acoustic()) {
      const auto qm = linear_backward(utt.acoustic, p.value("query_map.w"), q.d_input);
      add("query_map.w", qm.d_weight);
      add("query_map.b", qm.d_bias);
    }
    Matrix d_keys_in = k.d_input;
    d_keys_in += v.d_input;
    if (c.maps_linguistic()) {
      const auto m = linear_backward(tr.student, p.value("map.w"), d_keys_in);
      add("map.w", m.d_weight);
      add("map.b", m.d_bias);
      d_student = m.d_input;
    } else {
      d_student = std::move(d_keys_in);
    }
  } else {
    d_student = gru.d_input;
  }

  Matrix d_pooled = mse_grad(tr.student_pooled, utt.teacher);
  d_pooled *= alpha;
  d_student += mean_pool_backward(d_pooled, frames);
  const auto t = linear_backward(utt.acoustic, p.value("transfer.w"), d_student);
  add("transfer.w", t.d_weight);
  add("transfer.b", t.d_bias);
  return tr;
}

/// Index of the largest logit, lowest index on ties.
inline std::size_t argmax(const Matrix& logits) {
  if (logits.empty()) throw EmptyInputError("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

inline std::size_t predict(const Utterance& utt, const ModelParams& p) {
  const auto& c = p.config();
  detail::require_acoustic_width(utt.acoustic, c);
  const Matrix* head_in = &utt.acoustic;
  Matrix student, fused;
  if (c.has_transfer()) {
    student = transfer_forward(utt.acoustic, p);
    head_in = &student;
  }
  if (c.has_attention()) {
    fused = cross_attention(utt.acoustic, student, p).fused;
    head_in = &fused;
  }
  return argmax(intent_head(*head_in, p));
}

}  // namespace aln
