#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bl/label_map.hpp"
#include "bl/tensor.hpp"

namespace bl {

/// (X, Y, U): image, labels indexing into U (0 = background), observed categories.
struct SegmentationSample {
  std::string id;
  Tensor image;  // [H, W, 3]
  LabelMap labels;
  std::vector<std::string> categories;

  /// One-hot Y of shape [H, W, |U|].
  [[nodiscard]] Tensor mask() const;
};

struct Dataset {
  std::vector<SegmentationSample> samples;
  std::string meta;

  /// Union of sample categories in first-seen order.
  [[nodiscard]] std::vector<std::string> categories() const;
};

/// The twenty PASCAL VOC classes in fold order (fold i owns entries 5i..5i+4).
const std::vector<std::string>& pascal_universe();

/// "<modifier> <hue>" names; index 5i+j has hue j and modifier (i+j) % 4.
std::vector<std::string> synthetic_universe(std::size_t size = 20);

struct FoldSpec {
  std::size_t index = 0;
  std::vector<std::string> test_categories;
  std::vector<std::string> train_categories;

  [[nodiscard]] bool is_test(const std::string& category) const;
  [[nodiscard]] bool is_train(const std::string& category) const;
};

/// BadFoldIndex unless i < 4; BadUniverse unless 20 distinct non-empty names.
FoldSpec make_fold(std::size_t i, const std::vector<std::string>& universe);

/// JSON array of {"fold", "test", "train"} objects for all four folds.
std::string folds_json(const std::vector<std::string>& universe);

/// UnknownLabel when a label is negative or exceeds |U|.
Tensor one_hot_mask(const LabelMap& labels, const std::vector<std::string>& categories);

struct SyntheticConfig {
  std::size_t num_images = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t universe_size = 20;
  std::size_t shapes_per_image = 2;
  double noise = 0.05;             // pixel noise sigma
  double colour_cast = 0.12;       // per-image global shift bound
  double centre_spread = 5.0 / 32;  // centre sigma as a fraction of the side
  double radius_min = 8.0 / 32;     // half-extent bounds as fractions of the side
  double radius_max = 14.0 / 32;
  /// Canonical indices to draw from; empty means the whole universe.
  std::vector<std::size_t> allowed;

  /// Throws BadConfig.
  void validate() const;
};

/// Mean colour of a synthetic category before noise and cast.
std::vector<double> synthetic_colour(std::size_t category_index);
/// 0 rectangle, 1 ellipse, 2 diamond, 3 checkered rectangle.
std::size_t synthetic_shape_family(std::size_t category_index);

Dataset gen_synthetic(std::uint64_t seed, const SyntheticConfig& cfg);

struct FoldData {
  FoldSpec fold;
  Dataset train;
  Dataset test;
};

/// Train images from the fold's train categories and test images from its test categories.
FoldData make_synthetic_fold(std::uint64_t seed, std::size_t fold_index, const SyntheticConfig& cfg,
                             std::size_t num_train, std::size_t num_test);

/// Per-sample directories holding image.blt0, labels.pgm, categories.txt, plus meta.txt.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace bl
