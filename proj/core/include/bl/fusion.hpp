#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "bl/nn.hpp"
#include "bl/rng.hpp"
#include "bl/tensor.hpp"

namespace bl {

struct FusionConfig {
  std::size_t d_fuse = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  double init_std = 0.02;

  /// Throws BadConfig.
  void validate() const;
};

struct FusedTokens {
  Tensor visual;  // [N_v, d_fuse]
  Tensor text;    // [N_t, d_fuse]
};

/// theta_v / theta_t channel alignment followed by self-attention layers over
/// the concatenated [visual; text] sequence.
class FusionModule {
 public:
  FusionModule() = default;
  /// `with_layers` false builds the alignment MLPs only; fuse() is then the identity after alignment.
  static FusionModule init(const FusionConfig& cfg, std::size_t d_v, std::size_t d_t, Rng& rng, bool with_layers = true);

  [[nodiscard]] const FusionConfig& config() const { return cfg_; }
  [[nodiscard]] bool has_layers() const { return !layers_.empty(); }
  [[nodiscard]] std::size_t d_v() const { return theta_v_.first.in_dim(); }
  [[nodiscard]] std::size_t d_t() const { return theta_t_.first.in_dim(); }

  /// Throws DimensionMismatch on input width mismatch.
  [[nodiscard]] std::pair<Tensor, Tensor> align_channels(const Tensor& visual, const Tensor& text) const;
  /// Splits the fused sequence back at N_v. Attention maps are appended per layer and head when requested.
  [[nodiscard]] FusedTokens fuse(const Tensor& visual, const Tensor& text,
                                 std::vector<Tensor>* attention = nullptr) const;

  [[nodiscard]] NamedTensors parameters() const;
  [[nodiscard]] std::size_t parameter_count() const;

 private:
  FusionConfig cfg_;
  Mlp2 theta_v_;
  Mlp2 theta_t_;
  std::vector<TransformerLayer> layers_;
};

}  // namespace bl
