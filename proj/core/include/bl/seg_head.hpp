#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bl/fourier.hpp"
#include "bl/label_map.hpp"
#include "bl/nn.hpp"
#include "bl/rng.hpp"
#include "bl/tensor.hpp"

namespace bl {

struct DecoderConfig {
  std::size_t stages = 3;
  std::vector<std::size_t> channels = {32, 16, 16};
  double tau = 0.07;
  double threshold = 0.5;                          // default per-category cutoff
  std::map<std::string, double> class_thresholds;  // overrides by category name
  bool skip = true;                                // add nearest-upsampled tokens to the conv output
  double projection_scale = 0.1;                   // init scale of the final projection
  bool use_fused_text = true;                      // compare against fused (true) or aligned text features

  /// BadConfig on channel/threshold errors, NonPositiveTau on tau <= 0.
  void validate() const;
  [[nodiscard]] double threshold_for(const std::string& category) const;
};

/// Nearest 2x upsample + 3x3 conv + GELU per stage, then a per-pixel
/// projection back to d_fuse.
class Decoder {
 public:
  Decoder() = default;
  static Decoder init(const DecoderConfig& cfg, std::size_t d_fuse, Rng& rng);

  /// tokens [grid.h*grid.w, d_fuse] -> [H, W, d_fuse]. StageMismatch unless grid.p == 2^stages.
  [[nodiscard]] Tensor decode(const Tensor& tokens, const PatchGrid& grid) const;

  [[nodiscard]] NamedTensors parameters() const;
  [[nodiscard]] std::size_t d_fuse() const { return projection_.out_dim(); }

 private:
  DecoderConfig cfg_;
  std::vector<Tensor> conv_weights_;
  std::vector<Tensor> conv_biases_;
  Linear projection_;
};

/// Cosine similarity of every pixel feature against every text row: [|W|, H, W].
Tensor similarity_logits(const Tensor& feat_map, const Tensor& text);

struct PredictionSet {
  std::vector<std::string> categories;
  std::vector<double> thresholds;  // per category
  Tensor probs;                    // [|W|, H, W]
  Tensor masks;                    // [|W|, H, W], 0 or 1
  LabelMap labels;                 // argmax over passing categories, else background
};

/// probs = sigmoid(logits / tau), masks = probs >= threshold.
PredictionSet predict_masks(const Tensor& logits, const DecoderConfig& cfg, const std::vector<std::string>& categories);

/// Label map from per-category probabilities: highest probability among
/// categories passing their threshold, ties to the lower index, else 0.
LabelMap argmax_labels(const Tensor& probs, const std::vector<double>& thresholds);

/// Grid search per category for the cutoff maximizing pooled binary IoU.
/// `truth[i]` labels index into `predictions[i].categories`.
std::map<std::string, double> calibrate_thresholds(const std::vector<PredictionSet>& predictions,
                                                   const std::vector<LabelMap>& truth,
                                                   const std::vector<double>& grid = {});

}  // namespace bl
