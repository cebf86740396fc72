#include <gtest/gtest.h>

#include <cmath>

#include "bl/error.hpp"
#include "bl/ops.hpp"
#include "bl/rng.hpp"
#include "bl/seg_head.hpp"
#include "gradcheck.hpp"

using namespace bl;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

DecoderConfig with_tau(double tau) {
  DecoderConfig c;
  c.tau = tau;
  return c;
}

}  // namespace

TEST(SegHead, SigmoidOfZeroIsHalfForAnyTau) {
  for (double tau : {1e-6, 0.07, 1.0, 50.0}) {
    const auto ps = predict_masks(Tensor::zeros({2, 3, 3}), with_tau(tau), {"a", "b"});
    for (double p : ps.probs.data()) EXPECT_EQ(p, 0.5);
    for (double m : ps.masks.data()) EXPECT_EQ(m, 1.0);
  }
}

TEST(SegHead, ProbabilitiesMonotoneAndSharpenWithSmallerTau) {
  std::vector<double> z;
  for (int i = -20; i <= 20; ++i) z.push_back(i / 20.0);
  const Tensor logits = Tensor::create({1, 1, z.size()}, z);
  const auto wide = predict_masks(logits, with_tau(0.5), {"a"});
  const auto sharp = predict_masks(logits, with_tau(0.07), {"a"});
  for (std::size_t i = 1; i < z.size(); ++i) {
    EXPECT_GT(wide.probs[i], wide.probs[i - 1]);
    EXPECT_GT(sharp.probs[i], sharp.probs[i - 1]);
  }
  for (std::size_t i = 0; i < z.size(); ++i)
    EXPECT_GE(std::abs(sharp.probs[i] - 0.5), std::abs(wide.probs[i] - 0.5));
}

TEST(SegHead, CosineLogitsBoundedAndScaleInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 1 + rng.index(5), w = 1 + rng.index(5), d = 2 + rng.index(6), c = 1 + rng.index(4);
    const Tensor feat = bltest::random_tensor(rng, {h, w, d}, -3, 3, false);
    const Tensor text = bltest::random_tensor(rng, {c, d}, -3, 3, false);
    const Tensor a = similarity_logits(feat, text);
    ASSERT_EQ(a.shape(), (Shape{c, h, w}));
    for (double v : a.data()) {
      EXPECT_LE(v, 1.0);
      EXPECT_GE(v, -1.0);
    }
    Tensor scaled = feat.clone();
    auto s = scaled.mutable_data();
    for (std::size_t px = 0; px < h * w; ++px) {
      const double lambda = std::exp(rng.uniform(-5, 5));
      for (std::size_t k = 0; k < d; ++k) s[px * d + k] *= lambda;
    }
    const Tensor b = similarity_logits(scaled, text);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
  EXPECT_EQ(code_of([] { (void)similarity_logits(Tensor::zeros({2, 2, 3}), Tensor::zeros({1, 4})); }),
            ErrorCode::DimensionMismatch);
}

TEST(SegHead, MasksAreThresholdedProbabilities) {
  Rng rng(2);
  DecoderConfig cfg;
  cfg.class_thresholds = {{"b", 0.8}};
  const Tensor logits = bltest::random_tensor(rng, {3, 6, 5}, -1, 1, false);
  const auto ps = predict_masks(logits, cfg, {"a", "b", "c"});
  EXPECT_EQ(ps.thresholds, (std::vector<double>{0.5, 0.8, 0.5}));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 30; ++i)
      EXPECT_EQ(ps.masks[k * 30 + i], ps.probs[k * 30 + i] >= ps.thresholds[k] ? 1.0 : 0.0);
  EXPECT_EQ(ps.probs.shape(), (Shape{3, 6, 5}));
  EXPECT_EQ(ps.labels.h, 6u);
  EXPECT_EQ(ps.labels.w, 5u);
  EXPECT_EQ(code_of([&] { (void)predict_masks(logits, with_tau(0.0), {"a", "b", "c"}); }), ErrorCode::NonPositiveTau);
  EXPECT_EQ(code_of([&] { (void)predict_masks(logits, with_tau(-1.0), {"a", "b", "c"}); }), ErrorCode::NonPositiveTau);
}

TEST(SegHead, ArgmaxTiesToLowerIndexElseBackground) {
  // Pixel 0: tie between categories 1 and 2. Pixel 1: nothing passes. Pixel 2: category 3 wins.
  const Tensor probs = Tensor::create({3, 1, 3}, {0.7, 0.1, 0.6, 0.7, 0.2, 0.55, 0.4, 0.3, 0.9});
  const LabelMap m = argmax_labels(probs, {0.5, 0.5, 0.5});
  EXPECT_EQ(m.labels, (std::vector<std::int32_t>{1, 0, 3}));
  // A higher probability below its own threshold does not win.
  const LabelMap m2 = argmax_labels(probs, {0.5, 0.5, 0.95});
  EXPECT_EQ(m2.labels, (std::vector<std::int32_t>{1, 0, 1}));
}

TEST(SegHead, DecoderShapesAndStageContract) {
  Rng rng(3);
  for (std::size_t stages = 1; stages <= 3; ++stages) {
    DecoderConfig cfg;
    cfg.stages = stages;
    cfg.channels.assign(stages, 4);
    Rng init(stages);
    const Decoder dec = Decoder::init(cfg, 8, init);
    const std::size_t p = std::size_t{1} << stages;
    const PatchGrid grid{2, 3, p};
    const Tensor out = dec.decode(bltest::random_tensor(rng, {6, 8}, -1, 1, false), grid);
    EXPECT_EQ(out.shape(), (Shape{2 * p, 3 * p, 8}));
    EXPECT_EQ(code_of([&] { (void)dec.decode(Tensor::zeros({6, 8}), PatchGrid{2, 3, p * 2}); }),
              ErrorCode::StageMismatch);
    EXPECT_EQ(code_of([&] { (void)dec.decode(Tensor::zeros({5, 8}), grid); }), ErrorCode::ShapeMismatch);
  }
}

TEST(SegHead, DecoderGradients) {
  Rng rng(4), init(5);
  DecoderConfig cfg;
  cfg.stages = 1;
  cfg.channels = {3};
  cfg.projection_scale = 1.0;
  const Decoder dec = Decoder::init(cfg, 4, init);
  Tensor tokens = bltest::random_tensor(rng, {4, 4}, -1, 1);
  NamedTensors params = dec.parameters();
  params.emplace_back("tokens", tokens);
  const auto g = bltest::gradcheck([&] { return bltest::weighted_sum(dec.decode(tokens, {2, 2, 2}), 9); }, params);
  EXPECT_LE(g.worst(), 1e-4) << g.worst_name();
}

TEST(SegHead, ConfigValidation) {
  DecoderConfig c;
  c.channels = {16, 32, 8};
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  DecoderConfig n;
  n.channels = {16, 8};
  EXPECT_EQ(code_of([&] { n.validate(); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { with_tau(0.0).validate(); }), ErrorCode::NonPositiveTau);
}

TEST(SegHead, CalibrationPicksSeparatingThreshold) {
  // One category, probabilities 0.3 on background and 0.45 on the object.
  PredictionSet ps;
  ps.categories = {"a"};
  ps.probs = Tensor::create({1, 1, 4}, {0.3, 0.45, 0.45, 0.3});
  LabelMap truth(1, 4);
  truth.labels = {0, 1, 1, 0};
  const auto t = calibrate_thresholds({ps}, {truth});
  ASSERT_EQ(t.count("a"), 1u);
  EXPECT_GT(t.at("a"), 0.3);
  EXPECT_LE(t.at("a"), 0.45);
}
