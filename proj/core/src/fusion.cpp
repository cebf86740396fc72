#include "bl/fusion.hpp"

#include "bl/error.hpp"
#include "bl/ops.hpp"

namespace bl {

void FusionConfig::validate() const {
  if (d_fuse == 0 || num_heads == 0 || mlp_ratio == 0) {
    throw Error(ErrorCode::BadConfig, "fusion: d_fuse, num_heads and mlp_ratio must be positive");
  }
  if (d_fuse % num_heads != 0) {
    throw Error(ErrorCode::BadConfig, "fusion: d_fuse " + std::to_string(d_fuse) + " not divisible by " +
                                          std::to_string(num_heads) + " heads");
  }
  if (num_layers == 0) throw Error(ErrorCode::BadConfig, "fusion: num_layers must be at least 1");
  if (!(init_std > 0)) throw Error(ErrorCode::BadConfig, "fusion: init_std must be positive");
}

FusionModule FusionModule::init(const FusionConfig& cfg, std::size_t d_v, std::size_t d_t, Rng& rng,
                                bool with_layers) {
  cfg.validate();
  FusionModule m;
  m.cfg_ = cfg;
  m.theta_v_ = Mlp2::init(rng, d_v, cfg.d_fuse, true);
  m.theta_t_ = Mlp2::init(rng, d_t, cfg.d_fuse, true);
  // Layers are drawn even when unused so the other parameters match across variants.
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    auto layer = TransformerLayer::init(rng, cfg.d_fuse, cfg.num_heads, cfg.mlp_ratio, cfg.init_std, with_layers);
    if (with_layers) m.layers_.push_back(std::move(layer));
  }
  return m;
}

std::pair<Tensor, Tensor> FusionModule::align_channels(const Tensor& visual, const Tensor& text) const {
  if (visual.rank() != 2 || visual.dim(1) != d_v()) {
    throw Error(ErrorCode::DimensionMismatch, "fusion: visual tokens " + shape_str(visual.shape()) +
                                                  ", expected width " + std::to_string(d_v()));
  }
  if (text.rank() != 2 || text.dim(1) != d_t()) {
    throw Error(ErrorCode::DimensionMismatch, "fusion: text tokens " + shape_str(text.shape()) +
                                                  ", expected width " + std::to_string(d_t()));
  }
  return {theta_v_(visual), theta_t_(text)};
}

FusedTokens FusionModule::fuse(const Tensor& visual, const Tensor& text, std::vector<Tensor>* attention) const {
  auto [v, t] = align_channels(visual, text);
  if (layers_.empty()) return FusedTokens{v, t};
  const std::size_t n_v = v.dim(0), n_t = t.dim(0);
  Tensor z = concat_rows({v, t});
  for (const auto& layer : layers_) z = layer(z, attention);
  return FusedTokens{slice_rows(z, 0, n_v), slice_rows(z, n_v, n_t)};
}

NamedTensors FusionModule::parameters() const {
  NamedTensors out;
  theta_v_.collect("theta_v", out);
  theta_t_.collect("theta_t", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layer." + std::to_string(i), out);
  return out;
}

std::size_t FusionModule::parameter_count() const { return bl::parameter_count(parameters()); }

}  // namespace bl
