#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "bl/error.hpp"
#include "bl/fourier.hpp"
#include "bl/rng.hpp"
#include "gradcheck.hpp"

using namespace bl;

namespace {

double cosine(const double* a, const double* b, std::size_t d) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(Fourier, MatchesClosedForm) {
  const FourierConfig cfg;
  const PatchGrid grid{5, 7, 8};
  for (std::size_t y = 0; y < grid.h; ++y)
    for (std::size_t x = 0; x < grid.w; ++x) {
      const auto e = fourier_embed(x, y, grid, cfg);
      ASSERT_EQ(e.size(), 64u);
      const double u = -1.0 + 2.0 * x / 6.0, v = -1.0 + 2.0 * y / 4.0;
      for (std::size_t k = 0; k < 8; ++k) {
        const double f = 1.0 / static_cast<double>(1u << (7 - k));
        EXPECT_NEAR(e[2 * k], std::sin(std::numbers::pi * f * u), 1e-15);
        EXPECT_NEAR(e[2 * k + 1], std::cos(std::numbers::pi * f * u), 1e-15);
        EXPECT_NEAR(e[16 + 2 * k], std::sin(std::numbers::pi * f * v), 1e-15);
        EXPECT_NEAR(e[16 + 2 * k + 1], std::cos(std::numbers::pi * f * v), 1e-15);
      }
      for (std::size_t i = 32; i < 64; ++i) EXPECT_EQ(e[i], 0.0);
    }
}

TEST(Fourier, SingleCellAxisMapsToCentre) {
  EXPECT_EQ(normalized_coord(0, 1), 0.0);
  EXPECT_EQ(normalized_coord(0, 4), -1.0);
  EXPECT_EQ(normalized_coord(3, 4), 1.0);
}

TEST(Fourier, FieldIsDeterministicAndRowOrdered) {
  const FourierConfig cfg;
  const PatchGrid grid{3, 4, 8};
  const Tensor a = positional_field(grid, cfg), b = positional_field(grid, cfg);
  ASSERT_EQ(a.shape(), (Shape{12, 64}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
  const auto e = fourier_embed(2, 1, grid, cfg);
  for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(a[(1 * 4 + 2) * 64 + c], e[c]);
}

TEST(Fourier, ApplyPositionalIsExactlyAdditive) {
  Rng rng(3);
  const FourierConfig cfg;
  const PatchGrid grid{4, 4, 8};
  const Tensor x = bltest::random_tensor(rng, {16, 64}, -2, 2, false);
  const Tensor y = apply_positional(x, grid, cfg);
  const Tensor field = positional_field(grid, cfg);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i] + field[i]);
  try {
    (void)apply_positional(Tensor::zeros({15, 64}), grid, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Fourier, InjectiveOnSmallGrids) {
  const FourierConfig cfg;
  for (std::size_t h = 1; h <= 16; ++h)
    for (std::size_t w = 1; w <= 16; ++w) {
      const Tensor f = positional_field({h, w, 8}, cfg);
      std::set<std::vector<double>> seen;
      for (std::size_t t = 0; t < h * w; ++t)
        seen.emplace(f.data().begin() + t * 64, f.data().begin() + (t + 1) * 64);
      EXPECT_EQ(seen.size(), h * w) << h << "x" << w;
    }
}

TEST(Fourier, AdjacentCellsMoreSimilarThanFarCells) {
  const FourierConfig cfg;
  for (std::size_t h = 4; h <= 16; ++h)
    for (std::size_t w = 4; w <= 16; ++w) {
      const Tensor f = positional_field({h, w, 8}, cfg);
      const double* d = f.data().data();
      double min_adjacent = 2.0, max_far = -2.0;
      for (std::size_t a = 0; a < h * w; ++a)
        for (std::size_t b = a + 1; b < h * w; ++b) {
          const long dy = std::labs(static_cast<long>(a / w) - static_cast<long>(b / w));
          const long dx = std::labs(static_cast<long>(a % w) - static_cast<long>(b % w));
          const double c = cosine(d + a * 64, d + b * 64, 64);
          if (dx + dy == 1) min_adjacent = std::min(min_adjacent, c);
          if (2 * dx >= static_cast<long>(w) || 2 * dy >= static_cast<long>(h)) max_far = std::max(max_far, c);
        }
      EXPECT_GT(min_adjacent, max_far) << h << "x" << w;
    }
}

TEST(Fourier, UnseenResolutionsEvaluate) {
  const FourierConfig cfg;
  for (std::size_t side : {8u, 9u, 31u, 64u}) {
    const Tensor f = positional_field({side, side, 8}, cfg);
    for (double v : f.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Fourier, Errors) {
  const FourierConfig cfg;
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code([&] { (void)fourier_embed(4, 0, {4, 4, 8}, cfg); }), ErrorCode::OutOfGrid);
  EXPECT_EQ(code([&] { (void)fourier_embed(0, 0, {65, 4, 8}, cfg); }), ErrorCode::ConfigMismatch);
  EXPECT_EQ(code([] { (void)positional_field({4, 4, 8}, FourierConfig{9, 64, 32}); }), ErrorCode::ConfigMismatch);
  EXPECT_EQ(code([] { (void)PatchGrid::for_image(30, 32, 8); }), ErrorCode::IndivisibleResolution);
  EXPECT_EQ(PatchGrid::for_image(32, 48, 8), (PatchGrid{4, 6, 8}));
}
