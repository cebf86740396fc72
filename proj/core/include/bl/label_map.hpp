#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bl {

/// Per-pixel labels: 0 is background, c + 1 is the c-th entry of the
/// accompanying category list.
struct LabelMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t rows, std::size_t cols, std::int32_t fill = 0) : h(rows), w(cols), labels(rows * cols, fill) {}

  [[nodiscard]] std::int32_t at(std::size_t y, std::size_t x) const { return labels[y * w + x]; }
  std::int32_t& at(std::size_t y, std::size_t x) { return labels[y * w + x]; }
  [[nodiscard]] std::size_t size() const { return labels.size(); }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace bl
