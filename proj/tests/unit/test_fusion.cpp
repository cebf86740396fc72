#include <gtest/gtest.h>

#include <cmath>

#include "bl/encoders.hpp"
#include "bl/error.hpp"
#include "bl/fusion.hpp"
#include "bl/ops.hpp"
#include "bl/rng.hpp"
#include "gradcheck.hpp"

using namespace bl;

namespace {

FusionConfig tiny() {
  FusionConfig c;
  c.d_fuse = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.init_std = 0.3;
  return c;
}

}  // namespace

TEST(Fusion, PreservesTokenCountsAndWidths) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    FusionConfig cfg;
    cfg.num_heads = 1 + rng.index(4);
    cfg.d_fuse = cfg.num_heads * (2 + rng.index(4));
    cfg.num_layers = 1 + rng.index(2);
    const bool with_layers = rng.index(2) == 1;
    cfg.mlp_ratio = 1 + rng.index(3);
    const std::size_t dv = 3 + rng.index(10), dt = 3 + rng.index(10);
    const std::size_t nv = 1 + rng.index(20), nt = 1 + rng.index(6);
    Rng init(trial);
    const auto f = FusionModule::init(cfg, dv, dt, init, with_layers);
    const auto out = f.fuse(bltest::random_tensor(rng, {nv, dv}, -1, 1, false),
                            bltest::random_tensor(rng, {nt, dt}, -1, 1, false));
    EXPECT_EQ(out.visual.shape(), (Shape{nv, cfg.d_fuse}));
    EXPECT_EQ(out.text.shape(), (Shape{nt, cfg.d_fuse}));
  }
}

TEST(Fusion, WithoutLayersIsAlignmentOnly) {
  Rng rng(2), init(3);
  const auto f = FusionModule::init(FusionConfig{}, 10, 12, init, false);
  EXPECT_FALSE(f.has_layers());
  const Tensor v = bltest::random_tensor(rng, {5, 10}, -1, 1, false);
  const Tensor t = bltest::random_tensor(rng, {3, 12}, -1, 1, false);
  const auto fused = f.fuse(v, t);
  const auto [av, at] = f.align_channels(v, t);
  for (std::size_t i = 0; i < av.numel(); ++i) EXPECT_EQ(fused.visual[i], av[i]);
  for (std::size_t i = 0; i < at.numel(); ++i) EXPECT_EQ(fused.text[i], at[i]);
  try {
    (void)f.fuse(bltest::random_tensor(rng, {5, 9}, -1, 1, false), t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Fusion, TextPerturbationReachesVisualTokens) {
  int changed = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed), init(seed + 100);
    const auto f = FusionModule::init(FusionConfig{}, 16, 16, init, true);
    const Tensor v = bltest::random_tensor(rng, {6, 16}, -1, 1, false);
    Tensor t = bltest::random_tensor(rng, {2, 16}, -1, 1, false);
    const Tensor before = f.fuse(v, t).visual;
    Tensor t2 = t.clone();
    t2.mutable_data()[0] += 0.5;
    const Tensor after = f.fuse(v, t2).visual;
    double diff = 0;
    for (std::size_t i = 0; i < before.numel(); ++i) diff = std::max(diff, std::abs(before[i] - after[i]));
    if (diff > 1e-9) ++changed;
  }
  EXPECT_GE(changed, 9);
}

TEST(Fusion, TextPermutationEquivariance) {
  Rng rng(4), init(5);
  const auto f = FusionModule::init(FusionConfig{}, 12, 10, init, true);
  const Tensor v = bltest::random_tensor(rng, {4, 12}, -1, 1, false);
  const Tensor t = bltest::random_tensor(rng, {3, 10}, -1, 1, false);
  const std::vector<std::size_t> perm{2, 0, 1};
  std::vector<Tensor> rows;
  for (std::size_t p : perm) rows.push_back(slice_rows(t, p, 1));
  const auto a = f.fuse(v, t), b = f.fuse(v, concat_rows(rows));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(b.text[r * 64 + c], a.text[perm[r] * 64 + c], 1e-12);
  for (std::size_t i = 0; i < a.visual.numel(); ++i) EXPECT_NEAR(a.visual[i], b.visual[i], 1e-12);
}

TEST(Fusion, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    Rng init(40 + trial);
    const auto f = FusionModule::init(tiny(), 5, 6, init, true);
    Tensor v = bltest::random_tensor(rng, {4, 5}, -2, 2);
    Tensor t = bltest::random_tensor(rng, {2, 6}, -2, 2);
    NamedTensors params = f.parameters();
    params.emplace_back("visual_in", v);
    params.emplace_back("text_in", t);
    const auto g = bltest::gradcheck(
        [&] {
          const auto out = f.fuse(v, t);
          return add(bltest::weighted_sum(out.visual, 7), bltest::weighted_sum(out.text, 8));
        },
        params);
    EXPECT_LE(g.worst(), 1e-4) << g.worst_name();
  }
}

TEST(Fusion, GradientsStopAtFrozenEncoders) {
  StubEncoderConfig ec;
  ec.patch = 4;
  ec.d_v = 16;
  ec.d_t = 16;
  ec.heads = 2;
  const auto enc = FrozenEncoders::stub(ec);
  Rng rng(7), init(8);
  const auto f = FusionModule::init(FusionConfig{}, 16, 16, init, true);
  const auto vis = enc.encode_image(bltest::random_tensor(rng, {8, 8, 3}, 0, 1, false), "x", FourierConfig{2, 64, 16});
  const auto txt = enc.encode_text({"red", "blue"});
  const auto out = f.fuse(vis.tokens, txt.embeddings);
  backward(add(sum(out.visual), sum(out.text)));
  std::size_t with_grad = 0;
  for (const auto& [name, t] : f.parameters()) with_grad += t.has_grad();
  EXPECT_GT(with_grad, 0u);
  for (const auto& [name, t] : enc.weights()) EXPECT_FALSE(t.has_grad()) << name;
}

TEST(Fusion, ConfigValidation) {
  FusionConfig bad;
  bad.num_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
  FusionConfig zero;
  zero.d_fuse = 0;
  EXPECT_THROW(zero.validate(), Error);
}
