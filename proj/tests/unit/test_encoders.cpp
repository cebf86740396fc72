#include <gtest/gtest.h>

#include <filesystem>

#include "bl/encoders.hpp"
#include "bl/error.hpp"
#include "bl/rng.hpp"
#include "bl/tensor_io.hpp"
#include "gradcheck.hpp"

using namespace bl;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

StubEncoderConfig small_cfg() {
  StubEncoderConfig c;
  c.patch = 4;
  c.d_v = 16;
  c.d_t = 12;
  c.heads = 2;
  return c;
}

}  // namespace

TEST(Encoders, PatchifyLayout) {
  std::vector<double> px(4 * 6 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i);
  const Tensor img = Tensor::create({4, 6, 3}, px);
  const Tensor p = patchify(img, 2);
  ASSERT_EQ(p.shape(), (Shape{6, 12}));
  for (std::size_t gy = 0; gy < 2; ++gy)
    for (std::size_t gx = 0; gx < 3; ++gx)
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t ch = 0; ch < 3; ++ch)
            EXPECT_EQ(p[(gy * 3 + gx) * 12 + (r * 2 + c) * 3 + ch], px[((gy * 2 + r) * 6 + gx * 2 + c) * 3 + ch]);
}

TEST(Encoders, TemplatesVerbatim) {
  const auto& t = prompt_templates();
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(t[0], "An image of a {category}.");
  EXPECT_EQ(t[6], t[7]);
  EXPECT_EQ(t[8], "A resized image of a{category} within the context.");
  const auto e = expand_templates("dog");
  EXPECT_EQ(e[1], "This is an image of a dog.");
  EXPECT_EQ(code_of([] { (void)expand_templates(""); }), ErrorCode::EmptyCategory);
  EXPECT_EQ(tokenize("A resized image of aDog, 2x!"),
            (std::vector<std::string>{"a", "resized", "image", "of", "adog", "2x"}));
}

TEST(Encoders, StubIsAPureFunctionOfInputAndSeed) {
  const auto a = FrozenEncoders::stub(small_cfg());
  const auto b = FrozenEncoders::stub(small_cfg());
  StubEncoderConfig other = small_cfg();
  other.seed = 99;
  const auto c = FrozenEncoders::stub(other);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  Rng rng(5);
  const Tensor img = bltest::random_tensor(rng, {8, 8, 3}, 0, 1, false);
  const FourierConfig fc{2, 64, 16};
  const auto va = a.encode_image(img, "x", fc), vb = b.encode_image(img, "x", fc);
  ASSERT_EQ(va.tokens.shape(), (Shape{4, 16}));
  EXPECT_EQ(va.grid, (PatchGrid{2, 2, 4}));
  for (std::size_t i = 0; i < va.tokens.numel(); ++i) EXPECT_EQ(va.tokens[i], vb.tokens[i]);
  const auto ta = a.encode_text({"red", "blue"}), tc = c.encode_text({"red", "blue"});
  bool differs = false;
  for (std::size_t i = 0; i < ta.embeddings.numel(); ++i) differs |= ta.embeddings[i] != tc.embeddings[i];
  EXPECT_TRUE(differs);
}

TEST(Encoders, TextRowsFollowInputOrder) {
  const auto enc = FrozenEncoders::stub(small_cfg());
  const auto ab = enc.encode_text({"pale red", "dark blue", "cat"});
  const auto ba = enc.encode_text({"cat", "pale red", "dark blue"});
  ASSERT_EQ(ab.embeddings.shape(), (Shape{3, 12}));
  EXPECT_EQ(ab.categories, (std::vector<std::string>{"pale red", "dark blue", "cat"}));
  for (std::size_t c = 0; c < 12; ++c) {
    EXPECT_EQ(ab.embeddings[0 * 12 + c], ba.embeddings[1 * 12 + c]);
    EXPECT_EQ(ab.embeddings[2 * 12 + c], ba.embeddings[0 * 12 + c]);
  }
  EXPECT_EQ(code_of([&] { (void)enc.encode_text({}); }), ErrorCode::EmptyCategory);
  EXPECT_EQ(code_of([&] { (void)enc.encode_text({"a", ""}); }), ErrorCode::EmptyCategory);
  EXPECT_EQ(code_of([&] { (void)enc.encode_text({"a", "a"}); }), ErrorCode::DuplicateCategory);
}

TEST(Encoders, CategoryIsTemplateMeanOfPrompts) {
  const StubTextEncoder text(small_cfg());
  const auto cat = text.encode_category("dusty green");
  std::vector<double> mean(12, 0.0);
  for (const auto& p : expand_templates("dusty green")) {
    const auto v = text.encode_prompt(p);
    for (std::size_t i = 0; i < 12; ++i) mean[i] += v[i] / 12.0;
  }
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(cat[i], mean[i], 1e-12);
}

TEST(Encoders, WeightsAreFrozen) {
  const auto enc = FrozenEncoders::stub(small_cfg());
  const NamedTensors w = enc.weights();
  EXPECT_FALSE(w.empty());
  for (const auto& [name, t] : w) EXPECT_FALSE(t.requires_grad()) << name;
  Rng rng(6);
  const Tensor img = bltest::random_tensor(rng, {8, 8, 3}, 0, 1, false);
  EXPECT_FALSE(enc.encode_image(img, "x", FourierConfig{2, 64, 16}).tokens.requires_grad());
}

TEST(Encoders, PrecomputedRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "bl_pre";
  fs::remove_all(dir);
  Rng rng(7);
  const Tensor img = quantize_f32(bltest::random_tensor(rng, {2, 3, 16}, -1, 1, false));
  const Tensor txt = quantize_f32(bltest::random_tensor(rng, {8}, -1, 1, false));
  write_precomputed(dir, {{"im0", img}}, {{"red", txt}, {"blue", txt}});
  const auto enc = FrozenEncoders::load_precomputed(dir / "manifest.txt", 8);
  EXPECT_EQ(enc.kind(), EncoderKind::Precomputed);
  EXPECT_EQ(enc.d_v(), 16u);
  EXPECT_EQ(enc.d_t(), 8u);
  const auto v = enc.patch_embeddings(Tensor::zeros({16, 24, 3}), "im0");
  EXPECT_EQ(v.grid, (PatchGrid{2, 3, 8}));
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(v.tokens[i], img[i]);
  const auto t = enc.encode_text({"blue"});
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(t.embeddings[i], txt[i]);
  EXPECT_EQ(code_of([&] { (void)enc.encode_text({"green"}); }), ErrorCode::UnknownKey);
  EXPECT_EQ(code_of([&] { (void)enc.patch_embeddings(Tensor::zeros({16, 24, 3}), "im1"); }), ErrorCode::UnknownKey);
  EXPECT_EQ(code_of([&] { (void)FrozenEncoders::load_precomputed(dir / "absent.txt", 8); }),
            ErrorCode::ManifestMissing);

  // Inconsistent widths.
  const fs::path bad = fs::temp_directory_path() / "bl_pre_bad";
  fs::remove_all(bad);
  write_precomputed(bad, {{"a", Tensor::zeros({2, 2, 16})}, {"b", Tensor::zeros({2, 2, 15})}}, {{"red", txt}});
  EXPECT_EQ(code_of([&] { (void)PrecomputedStore::load(bad / "manifest.txt"); }), ErrorCode::DimensionMismatch);
}
