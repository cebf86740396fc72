#include "bl/fourier.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include "bl/error.hpp"
#include "bl/ops.hpp"

namespace bl {

void FourierConfig::validate() const {
  if (num_bands == 0 || max_resolution == 0 || d == 0) {
    throw Error(ErrorCode::ConfigMismatch, "fourier: num_bands, max_resolution and d must be positive");
  }
  if (4 * num_bands > d) {
    throw Error(ErrorCode::ConfigMismatch, "fourier: 4 * num_bands = " + std::to_string(4 * num_bands) +
                                               " exceeds d = " + std::to_string(d));
  }
}

std::vector<double> FourierConfig::frequencies() const {
  std::vector<double> f(num_bands);
  for (std::size_t k = 0; k < num_bands; ++k) {
    f[k] = std::ldexp(1.0, static_cast<int>(k) - static_cast<int>(num_bands) + 1);
  }
  return f;
}

PatchGrid PatchGrid::for_image(std::size_t height, std::size_t width, std::size_t p) {
  if (p == 0 || height == 0 || width == 0 || height % p != 0 || width % p != 0) {
    throw Error(ErrorCode::IndivisibleResolution, std::to_string(height) + "x" + std::to_string(width) +
                                                      " image with patch size " + std::to_string(p));
  }
  return PatchGrid{height / p, width / p, p};
}

double normalized_coord(std::size_t index, std::size_t count) {
  if (count <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(index) / static_cast<double>(count - 1);
}

namespace {

void check_grid(const PatchGrid& grid, const FourierConfig& cfg) {
  cfg.validate();
  if (grid.h == 0 || grid.w == 0) throw Error(ErrorCode::ConfigMismatch, "fourier: empty grid");
  if (grid.h > cfg.max_resolution || grid.w > cfg.max_resolution) {
    throw Error(ErrorCode::ConfigMismatch, "fourier: grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                                               " exceeds max_resolution " + std::to_string(cfg.max_resolution));
  }
}

void fill_embed(double* out, std::size_t x, std::size_t y, const PatchGrid& grid, const std::vector<double>& freqs) {
  const double u = normalized_coord(x, grid.w);
  const double v = normalized_coord(y, grid.h);
  const std::size_t nb = freqs.size();
  for (std::size_t k = 0; k < nb; ++k) {
    out[2 * k] = std::sin(std::numbers::pi * freqs[k] * u);
    out[2 * k + 1] = std::cos(std::numbers::pi * freqs[k] * u);
    out[2 * nb + 2 * k] = std::sin(std::numbers::pi * freqs[k] * v);
    out[2 * nb + 2 * k + 1] = std::cos(std::numbers::pi * freqs[k] * v);
  }
}

}  // namespace

std::vector<double> fourier_embed(std::size_t x, std::size_t y, const PatchGrid& grid, const FourierConfig& cfg) {
  check_grid(grid, cfg);
  if (x >= grid.w || y >= grid.h) {
    throw Error(ErrorCode::OutOfGrid, "(" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                                          std::to_string(grid.h) + "x" + std::to_string(grid.w));
  }
  std::vector<double> out(cfg.d, 0.0);
  fill_embed(out.data(), x, y, grid, cfg.frequencies());
  return out;
}

Tensor positional_field(const PatchGrid& grid, const FourierConfig& cfg) {
  check_grid(grid, cfg);
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>;
  static std::mutex mutex;
  static std::map<Key, std::vector<double>> cache;
  const Key key{grid.h, grid.w, cfg.num_bands, cfg.d};
  std::vector<double> field;
  {
    std::lock_guard lock(mutex);
    auto it = cache.find(key);
    if (it == cache.end()) {
      std::vector<double> values(grid.tokens() * cfg.d, 0.0);
      const auto freqs = cfg.frequencies();
      for (std::size_t y = 0; y < grid.h; ++y)
        for (std::size_t x = 0; x < grid.w; ++x) fill_embed(values.data() + (y * grid.w + x) * cfg.d, x, y, grid, freqs);
      it = cache.emplace(key, std::move(values)).first;
    }
    field = it->second;
  }
  return Tensor::create({grid.tokens(), cfg.d}, std::move(field));
}

Tensor apply_positional(const Tensor& patches, const PatchGrid& grid, const FourierConfig& cfg) {
  if (patches.rank() != 2 || patches.dim(0) != grid.tokens() || patches.dim(1) != cfg.d) {
    throw Error(ErrorCode::ShapeMismatch, "apply_positional: tokens " + shape_str(patches.shape()) + " for grid " +
                                              std::to_string(grid.h) + "x" + std::to_string(grid.w) + ", d " +
                                              std::to_string(cfg.d));
  }
  return add(patches, positional_field(grid, cfg));
}

}  // namespace bl
