#pragma once

#include <map>
#include <string>
#include <vector>

#include "bl/config.hpp"
#include "bl/encoders.hpp"
#include "bl/fusion.hpp"
#include "bl/seg_head.hpp"

namespace bl {

/// Trainable part of one ablation variant: theta MLPs, optional fusion
/// layers, decoder, and (B_L_0 only) a learned position table.
class SegModel {
 public:
  SegModel() = default;
  static SegModel init(const ExperimentConfig& cfg, std::size_t d_v, std::size_t d_t);

  [[nodiscard]] const ExperimentConfig& config() const { return cfg_; }
  [[nodiscard]] AblationVariant variant() const { return cfg_.variant; }
  [[nodiscard]] const PatchGrid& grid() const { return grid_; }
  [[nodiscard]] const FusionModule& fusion() const { return fusion_; }
  [[nodiscard]] const Decoder& decoder() const { return decoder_; }
  [[nodiscard]] const Tensor& position_table() const { return position_table_; }

  /// Frozen visual features with this variant's positional scheme. The learned
  /// table only fits the training grid; other grids raise ConfigMismatch.
  [[nodiscard]] VisualFeatures encode_image(const FrozenEncoders& enc, const Tensor& image,
                                            const std::string& image_id) const;
  /// True when encode_image output is constant across training (no trainable input).
  [[nodiscard]] bool visual_features_frozen() const { return flags_of(cfg_.variant).use_fourier; }

  /// Per-category cosine logits [|W|, H, W] for encoded visual and text features.
  [[nodiscard]] Tensor logits(const VisualFeatures& visual, const Tensor& text) const;

  [[nodiscard]] NamedTensors parameters() const;
  [[nodiscard]] std::size_t parameter_count() const;
  /// Copies values by name. ConfigMismatch on a missing name or a shape difference.
  void load_parameters(const NamedTensors& values);

 private:
  ExperimentConfig cfg_;
  PatchGrid grid_;
  FusionModule fusion_;
  Decoder decoder_;
  Tensor position_table_;
};

}  // namespace bl
