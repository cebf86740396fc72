#pragma once

#include <cstddef>
#include <vector>

#include "bl/tensor.hpp"

namespace bl {

struct FourierConfig {
  std::size_t num_bands = 8;
  std::size_t max_resolution = 64;
  std::size_t d = 64;

  /// Throws ConfigMismatch when 4 * num_bands > d or a field is zero.
  void validate() const;
  /// f_k = 2^(k - num_bands + 1): a doubling ladder whose top band is 1.
  [[nodiscard]] std::vector<double> frequencies() const;
};

struct PatchGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t p = 1;

  /// Throws IndivisibleResolution unless p divides both sides.
  static PatchGrid for_image(std::size_t height, std::size_t width, std::size_t p);
  [[nodiscard]] std::size_t tokens() const noexcept { return h * w; }
  bool operator==(const PatchGrid&) const = default;
};

/// Grid index mapped onto [-1, 1]; a single-cell axis maps to 0.
double normalized_coord(std::size_t index, std::size_t count);

/// f_emb(x, y): [sin, cos] per band for x, then for y, zero padded to cfg.d.
std::vector<double> fourier_embed(std::size_t x, std::size_t y, const PatchGrid& grid, const FourierConfig& cfg);

/// The full [h*w, d] field in row-major grid order. Cached per (grid, cfg).
Tensor positional_field(const PatchGrid& grid, const FourierConfig& cfg);

/// X = x + f_emb, token by token.
Tensor apply_positional(const Tensor& patches, const PatchGrid& grid, const FourierConfig& cfg);

}  // namespace bl
