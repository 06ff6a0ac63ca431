// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include <gtest/gtest.h>

#include "aln/aln.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;
using aln::Matrix;
using aln::ModelConfig;
using aln::Variant;

constexpr Variant kAllVariants[] = {Variant::baseline2, Variant::aln_linguistic, Variant::aln};

aln::Utterance make_utterance(aln::Stream& s, std::size_t frames, const ModelConfig& c,
                              std::size_t label = 0) {
  aln::Utterance u;
  u.id = "u";
  u.acoustic = oracle::random_matrix(s, frames, c.d_acoustic);
  u.teacher = oracle::random_matrix(s, 1, c.d_linguistic);
  u.label = label;
  return u;
}

// --- init -------------------------------------------------------------------

TEST(Init, SameSeedSameValues) {
  const auto c = ModelConfig::small_profile(Variant::aln);
  EXPECT_TRUE(same_values(aln::init_model(c), aln::init_model(c)));
  auto other = c;
  other.init_seed = 1;
  EXPECT_FALSE(same_values(aln::init_model(c), aln::init_model(other)));
}

TEST(Init, BiasesZeroWeightsWithinGlorotBound) {
  for (auto v : kAllVariants) {
    const auto p = aln::init_model(ModelConfig::small_profile(v));
    for (const auto& t : p.tensors()) {
      if (t.name.ends_with(".b") || t.name.starts_with("gru.b_")) {
        for (double x : t.value.values()) EXPECT_EQ(x, 0.0) << t.name;
        continue;
      }
      const double bound = aln::glorot_bound(t.value.rows(), t.value.cols());
      double largest = 0.0;
      for (double x : t.value.values()) {
        EXPECT_LE(std::abs(x), bound) << t.name;
        largest = std::max(largest, std::abs(x));
      }
      EXPECT_GT(largest, 0.5 * bound) << t.name;
    }
  }
}

TEST(Init, LayoutPerVariant) {
  auto c = ModelConfig::small_profile(Variant::baseline2);
  auto p = aln::init_model(c);
  EXPECT_FALSE(p.has("transfer.w"));
  EXPECT_THROW(p.at("transfer.w"), aln::UnsupportedVariantError);
  EXPECT_EQ(p.value("gru.w_z").rows(), 32u);

  p = aln::init_model(ModelConfig::small_profile(Variant::aln_linguistic));
  EXPECT_TRUE(p.has("transfer.w"));
  EXPECT_FALSE(p.has("attn.q.w"));
  EXPECT_EQ(p.value("gru.w_z").rows(), 96u);

  p = aln::init_model(ModelConfig::small_profile(Variant::aln));
  EXPECT_TRUE(p.has("map.w"));
  EXPECT_FALSE(p.has("query_map.w"));
  EXPECT_EQ(p.value("map.w").rows(), 96u);
  EXPECT_EQ(p.value("gru.w_z").rows(), 32u);

  ModelConfig same{Variant::aln, 6, 6, 6, 4, 3, 0};
  EXPECT_FALSE(aln::init_model(same).has("map.w"));
  EXPECT_FALSE(aln::init_model(same).has("query_map.w"));
  ModelConfig both{Variant::aln, 5, 6, 4, 4, 3, 0};
  EXPECT_TRUE(aln::init_model(both).has("map.w"));
  EXPECT_TRUE(aln::init_model(both).has("query_map.w"));
}

TEST(Init, ZeroDimensionRejected) {
  ModelConfig c = ModelConfig::small_profile(Variant::aln);
  c.gru_hidden = 0;
  EXPECT_THROW(aln::init_model(c), aln::ValidationError);
}

// --- transfer ---------------------------------------------------------------

TEST(Transfer, IdentityExtendedExample) {
  ModelConfig c{Variant::aln_linguistic, 2, 3, 2, 2, 2, 0};
  auto p = aln::init_model(c);
  p.at("transfer.w").value = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}});
  p.at("transfer.b").value = Matrix::row_vector({0, 0, 5});
  const Matrix out = aln::transfer_forward(Matrix::from_rows({{1.5, -2}, {0, 4}}), p);
  EXPECT_EQ(out, Matrix::from_rows({{1.5, -2, 5}, {0, 4, 5}}));
}

TEST(Transfer, PreservesFrameCountAndMatchesOracle) {
  const auto c = ModelConfig::small_profile(Variant::aln);
  auto p = aln::init_model(c);
  aln::Stream s(11);
  oracle::randomize(p, s);
  for (std::size_t frames : {1u, 5u, 40u}) {
    const Matrix a = oracle::random_matrix(s, frames, c.d_acoustic);
    const Matrix out = aln::transfer_forward(a, p);
    ASSERT_EQ(out.rows(), frames);
    ASSERT_EQ(out.cols(), c.d_linguistic);
    const Matrix ref = oracle::affine(a, p.value("transfer.w"), p.value("transfer.b"));
    EXPECT_LE(aln::max_abs_diff(out, ref), 1e-12);
  }
}

TEST(Transfer, Errors) {
  auto p = aln::init_model(ModelConfig::small_profile(Variant::aln));
  EXPECT_THROW(aln::transfer_forward(Matrix(3, 31), p), aln::DimensionError);
  EXPECT_THROW(aln::transfer_forward(Matrix(0, 32), p), aln::EmptyInputError);
  auto b = aln::init_model(ModelConfig::small_profile(Variant::baseline2));
  EXPECT_THROW(aln::transfer_forward(Matrix(3, 32), b), aln::UnsupportedVariantError);
}

// --- distillation loss ------------------------------------------------------

TEST(DistillationLoss, Examples) {
  auto d = aln::compute_loss_tl(Matrix::from_rows({{0, 2}, {2, 0}}), Matrix::row_vector({1, 1}));
  EXPECT_EQ(d.loss_tl, 0.0);
  EXPECT_EQ(d.student_pooled, Matrix::row_vector({1, 1}));
  d = aln::compute_loss_tl(Matrix::from_rows({{2, 2}}), Matrix::row_vector({0, 0}));
  EXPECT_EQ(d.loss_tl, 4.0);
  EXPECT_THROW(aln::compute_loss_tl(Matrix(2, 3), Matrix(1, 2)), aln::DimensionError);
}

TEST(DistillationLoss, NonNegativeAndZeroOnlyWhenEqual) {
  aln::Stream s(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix seq = oracle::random_matrix(s, 1 + trial % 7, 4);
    const Matrix teacher = oracle::random_matrix(s, 1, 4);
    EXPECT_GT(aln::compute_loss_tl(seq, teacher).loss_tl, 0.0);
    EXPECT_EQ(aln::compute_loss_tl(seq, aln::mean_pool(seq)).loss_tl, 0.0);
  }
}

// --- cross attention --------------------------------------------------------

class Attention : public ::testing::Test {
 protected:
  ModelConfig cfg_{Variant::aln, 5, 7, 4, 3, 3, 2};
  aln::ModelParams params_ = aln::init_model(cfg_);
  aln::Stream stream_{21};
  void SetUp() override { oracle::randomize(params_, stream_); }
};

TEST_F(Attention, SingleFrameCollapsesToValue) {
  const Matrix a = oracle::random_matrix(stream_, 1, 5);
  const Matrix st = oracle::random_matrix(stream_, 1, 7);
  const auto out = aln::cross_attention(a, st, params_);
  EXPECT_EQ(out.attention_weights, Matrix(1, 1, 1.0));
  const Matrix keys = oracle::affine(st, params_.value("map.w"), params_.value("map.b"));
  const Matrix v = oracle::affine(keys, params_.value("attn.v.w"), params_.value("attn.v.b"));
  EXPECT_LE(aln::max_abs_diff(out.fused, v), 1e-12);
}

TEST_F(Attention, IdenticalKeysGiveUniformWeights) {
  const Matrix a = oracle::random_matrix(stream_, 4, 5);
  const Matrix row = oracle::random_matrix(stream_, 1, 7);
  Matrix st(4, 7);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 7; ++j) st(t, j) = row[j];
  const auto out = aln::cross_attention(a, st, params_);
  for (double w : out.attention_weights.values()) EXPECT_NEAR(w, 0.25, 1e-15);
}

TEST_F(Attention, MatchesPairwiseOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t frames = 1 + static_cast<std::size_t>(trial) % 9;
    const Matrix a = oracle::random_matrix(stream_, frames, 5);
    const Matrix st = oracle::random_matrix(stream_, frames, 7);
    const auto out = aln::cross_attention(a, st, params_);
    const auto ref = oracle::attention(a, st, params_);
    EXPECT_LE(aln::max_abs_diff(out.fused, ref.fused), 1e-10);
    EXPECT_LE(aln::max_abs_diff(out.attention_weights, ref.weights), 1e-10);
  }
}

TEST_F(Attention, WeightRowsAreDistributions) {
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t frames = 1 + static_cast<std::size_t>(trial) % 12;
    const auto out = aln::cross_attention(oracle::random_matrix(stream_, frames, 5, 3.0),
                                          oracle::random_matrix(stream_, frames, 7, 3.0), params_);
    for (std::size_t i = 0; i < frames; ++i) {
      double sum = 0.0;
      for (double w : out.attention_weights.row(i)) {
        EXPECT_GE(w, 0.0);
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST_F(Attention, LengthMismatchIsAlignmentError) {
  EXPECT_THROW(aln::cross_attention(Matrix(3, 5), Matrix(4, 7), params_), aln::AlignmentError);
}

TEST(AttentionVariants, UnavailableOutsideFullModel) {
  auto p = aln::init_model(ModelConfig::small_profile(Variant::aln_linguistic));
  EXPECT_THROW(aln::cross_attention(Matrix(2, 32), Matrix(2, 96), p),
               aln::UnsupportedVariantError);
}

// --- intent head ------------------------------------------------------------

TEST(IntentHead, ZeroParametersGiveHeadBias) {
  ModelConfig c{Variant::baseline2, 3, 4, 3, 4, 3, 0};
  auto p = aln::init_model(c);
  for (auto& t : p.tensors()) t.value.fill(0.0);
  p.at("head.b").value = Matrix::row_vector({0.5, -1, 2});
  const Matrix logits = aln::intent_head(Matrix(6, 3, 1.0), p);
  EXPECT_EQ(logits, Matrix::row_vector({0.5, -1, 2}));
}

TEST(IntentHead, MatchesCompositionOracle) {
  ModelConfig c{Variant::baseline2, 4, 4, 4, 5, 3, 0};
  auto p = aln::init_model(c);
  aln::Stream s(8);
  oracle::randomize(p, s);
  for (std::size_t frames : {1u, 2u, 7u}) {
    const Matrix seq = oracle::random_matrix(s, frames, 4);
    const Matrix h = oracle::gru(seq, p, Matrix(1, 5));
    Matrix pooled(1, 5, -std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j < 5; ++j) pooled[j] = std::max(pooled[j], h(t, j));
    const Matrix ref = oracle::affine(pooled, p.value("head.w"), p.value("head.b"));
    EXPECT_LE(aln::max_abs_diff(aln::intent_head(seq, p), ref), 1e-12);
  }
}

TEST(IntentHead, WidthMismatchRejected) {
  auto p = aln::init_model(ModelConfig::small_profile(Variant::aln_linguistic));
  EXPECT_THROW(aln::intent_head(Matrix(3, 32), p), aln::DimensionError);
}

// --- forward / losses -------------------------------------------------------

TEST(Forward, CombineLossesExample) {
  const auto l = aln::combine_losses(0.5, 1.0, 0.8);
  EXPECT_NEAR(l.loss_total, 0.6, 1e-15);
  EXPECT_THROW(aln::combine_losses(0.5, 1.0, 1.2), aln::ValidationError);
  EXPECT_THROW(aln::combine_losses(0.5, 1.0, -0.1), aln::ValidationError);
  EXPECT_THROW(aln::combine_losses(0.5, 1.0, std::nan("")), aln::ValidationError);
}

TEST(Forward, AlphaEndpointsSelectOneLoss) {
  const auto c = ModelConfig::small_profile(Variant::aln);
  const auto p = aln::init_model(c);
  aln::Stream s(4);
  const auto u = make_utterance(s, 6, c, 3);
  const auto l0 = aln::forward(u, p, 0.0).second;
  const auto l1 = aln::forward(u, p, 1.0).second;
  EXPECT_EQ(l0.loss_total, l0.loss_intent);
  EXPECT_EQ(l1.loss_total, l1.loss_tl);
  EXPECT_GT(l0.loss_tl, 0.0);
  EXPECT_EQ(l0.loss_tl, l1.loss_tl);
}

TEST(Forward, OutputsPerVariant) {
  aln::Stream s(6);
  for (auto v : kAllVariants) {
    const auto c = ModelConfig::small_profile(v);
    const auto u = make_utterance(s, 5, c);
    const auto [out, loss] = aln::forward(u, aln::init_model(c), 0.5);
    EXPECT_EQ(out.logits.cols(), 8u);
    EXPECT_EQ(out.student_pooled.has_value(), v != Variant::baseline2);
    EXPECT_EQ(out.attention_weights.has_value(), v == Variant::aln);
    if (out.attention_weights) {
      EXPECT_EQ(out.attention_weights->rows(), 5u);
      EXPECT_EQ(out.fused->cols(), c.d_attn);
    }
    EXPECT_TRUE(std::isfinite(loss.loss_total));
  }
}

TEST(Forward, BaselineIgnoresTeacher) {
  const auto c = ModelConfig::small_profile(Variant::baseline2);
  const auto p = aln::init_model(c);
  aln::Stream s(9);
  auto u = make_utterance(s, 7, c, 2);
  const auto [a, la] = aln::forward(u, p, 0.8);
  u.teacher = oracle::random_matrix(s, 1, 96, 50.0);
  const auto [b, lb] = aln::forward(u, p, 0.8);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(la.loss_tl, 0.0);
  EXPECT_EQ(la.loss_total, lb.loss_total);
  u.teacher = Matrix();
  EXPECT_NO_THROW(aln::forward(u, p, 0.8));
}

TEST(Forward, InputErrors) {
  const auto c = ModelConfig::small_profile(Variant::aln);
  const auto p = aln::init_model(c);
  aln::Stream s(1);
  auto u = make_utterance(s, 3, c);
  u.label = 8;
  EXPECT_THROW(aln::forward(u, p, 0.5), aln::LabelError);
  u = make_utterance(s, 3, c);
  u.teacher = Matrix(1, 95);
  EXPECT_THROW(aln::forward(u, p, 0.5), aln::DimensionError);
  u = make_utterance(s, 3, c);
  u.acoustic = Matrix(0, 32);
  EXPECT_THROW(aln::forward(u, p, 0.5), aln::EmptyInputError);
}

// --- prediction -------------------------------------------------------------

TEST(Predict, ArgmaxTiesGoLow) {
  EXPECT_EQ(aln::argmax(Matrix::row_vector({1, 3, 3, 2})), 1u);
  EXPECT_EQ(aln::argmax(Matrix::row_vector({-1, -1})), 0u);
  EXPECT_EQ(aln::argmax(Matrix::row_vector({0, 0, 0.5})), 2u);
}

TEST(Predict, AgreesWithForwardAndIgnoresLogitShift) {
  aln::Stream s(30);
  for (auto v : kAllVariants) {
    const auto c = ModelConfig::small_profile(v);
    auto p = aln::init_model(c);
    oracle::randomize(p, s, 0.3);
    for (int i = 0; i < 10; ++i) {
      const auto u = make_utterance(s, 2 + static_cast<std::size_t>(i), c);
      const auto k = aln::predict(u, p);
      EXPECT_EQ(k, aln::argmax(aln::forward(u, p, 0.5).first.logits));
      auto shifted = p;
      for (auto& b : shifted.at("head.b").value.values()) b += 17.0;
      EXPECT_EQ(aln::predict(u, shifted), k);
    }
  }
}

// --- gradients --------------------------------------------------------------

struct GradCase {
  Variant variant;
  double alpha;
};

class GradientCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradientCheck, AnalyticMatchesFiniteDifferences) {
  const auto [variant, alpha] = GetParam();
  const auto data = aln::tiny_gradcheck_data();
  auto p = aln::init_model(aln::tiny_gradcheck_config(variant));
  aln::GradcheckOptions opt;
  opt.alpha = alpha;
  const auto report = aln::gradcheck(p, data.train.utterances, opt);
  for (const auto& e : report.entries)
    EXPECT_LT(e.max_rel_error, 1e-3) << e.name << " analytic " << e.analytic_at_worst
                                     << " numeric " << e.numeric_at_worst;
  EXPECT_EQ(report.entries.size(), p.tensors().size());
}

INSTANTIATE_TEST_SUITE_P(
    AllVariantsAndAlphas, GradientCheck,
    ::testing::Values(GradCase{Variant::baseline2, 0.0}, GradCase{Variant::baseline2, 0.5},
                      GradCase{Variant::baseline2, 0.8}, GradCase{Variant::baseline2, 1.0},
                      GradCase{Variant::aln_linguistic, 0.0},
                      GradCase{Variant::aln_linguistic, 0.5},
                      GradCase{Variant::aln_linguistic, 0.8},
                      GradCase{Variant::aln_linguistic, 1.0}, GradCase{Variant::aln, 0.0},
                      GradCase{Variant::aln, 0.5}, GradCase{Variant::aln, 0.8},
                      GradCase{Variant::aln, 1.0}));

TEST(GradientCheckShapes, BothMappingLayersAndNone) {
  const auto data = aln::tiny_gradcheck_data();
  for (std::size_t d_attn : {3u, 6u}) {
    ModelConfig c{Variant::aln, 4, 6, d_attn, 5, 3, 1};
    auto p = aln::init_model(c);
    aln::Stream s(d_attn);
    oracle::randomize(p, s, 0.4);
    const auto report = aln::gradcheck(p, data.train.utterances);
    EXPECT_TRUE(report.passed()) << "d_attn " << d_attn << " worst " << report.max_rel_error();
    EXPECT_EQ(p.has("query_map.w"), d_attn != 4);
    EXPECT_EQ(p.has("map.w"), d_attn != 6);
  }
}

TEST(Gradients, AccumulationIsLinearInScale) {
  const auto c = ModelConfig::small_profile(Variant::aln);
  auto a = aln::init_model(c);
  auto b = a;
  aln::Stream s(12);
  const auto u = make_utterance(s, 6, c, 1);
  aln::accumulate_gradients(u, a, 0.8, 1.0);
  aln::accumulate_gradients(u, b, 0.8, 0.25);
  aln::accumulate_gradients(u, b, 0.8, 0.75);
  for (std::size_t i = 0; i < a.tensors().size(); ++i)
    EXPECT_LE(aln::max_abs_diff(a.tensors()[i].gradient, b.tensors()[i].gradient), 1e-12)
        << a.tensors()[i].name;
}

TEST(Gradients, AlphaOneLeavesHeadUntouched) {
  const auto c = ModelConfig::small_profile(Variant::aln_linguistic);
  auto p = aln::init_model(c);
  aln::Stream s(2);
  aln::accumulate_gradients(make_utterance(s, 4, c), p, 1.0);
  for (const auto& t : p.tensors()) {
    const bool zero = std::all_of(t.gradient.values().begin(), t.gradient.values().end(),
                                  [](double g) { return g == 0.0; });
    EXPECT_EQ(zero, !t.name.starts_with("transfer")) << t.name;
  }
}

// --- checkpoints ------------------------------------------------------------

class Checkpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("aln_model_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(Checkpoint, RoundtripIsExactForEveryVariant) {
  aln::Stream s(77);
  for (auto v : kAllVariants) {
    auto p = aln::init_model(ModelConfig::small_profile(v));
    oracle::randomize(p, s);
    p.at("head.b").value[0] = -0.0;
    const auto path = dir_ / "model.ckpt";
    aln::save_checkpoint(p, path);
    const auto loaded = aln::load_checkpoint(path);
    EXPECT_TRUE(same_values(p, loaded));
    EXPECT_TRUE(std::signbit(loaded.value("head.b")[0]));
    EXPECT_EQ(aln::serialize_checkpoint(loaded), aln::textio::read_file(path));
  }
}

TEST_F(Checkpoint, NonFiniteRefusedWithoutWriting) {
  auto p = aln::init_model(ModelConfig::small_profile(Variant::aln));
  p.at("attn.v.w").value[3] = std::numeric_limits<double>::infinity();
  const auto path = dir_ / "bad.ckpt";
  try {
    aln::save_checkpoint(p, path);
    FAIL();
  } catch (const aln::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("attn.v.w"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(path));
}

TEST(CheckpointFormat, CorruptInputsRejected) {
  const auto p = aln::init_model(ModelConfig::small_profile(Variant::aln_linguistic));
  const std::string text = aln::serialize_checkpoint(p);
  EXPECT_THROW(aln::parse_checkpoint(text.substr(0, text.size() - 5)), aln::ParseError);
  std::string renamed = text;
  renamed.replace(renamed.find("transfer.b"), 10, "transfer.c");
  EXPECT_THROW(aln::parse_checkpoint(renamed), aln::ValidationError);
  std::string variant = text;
  variant.replace(variant.find("aln_linguistic"), 14, "aln_bogus_name");
  EXPECT_THROW(aln::parse_checkpoint(variant), aln::ValidationError);
  const auto first_tensor_end = text.find('\n', text.find('\n') + 1);
  std::string dropped = text;
  dropped.erase(text.find('\n') + 1, first_tensor_end - text.find('\n'));
  EXPECT_THROW(aln::parse_checkpoint(dropped), aln::ValidationError);
}

}  // namespace
