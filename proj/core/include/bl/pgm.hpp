#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bl {

struct GrayImage {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary P5, maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace bl
