#include "bl/model.hpp"

#include "bl/error.hpp"
#include "bl/ops.hpp"

namespace bl {

SegModel SegModel::init(const ExperimentConfig& cfg, std::size_t d_v, std::size_t d_t) {
  cfg.validate();
  SegModel m;
  m.cfg_ = cfg;
  m.grid_ = PatchGrid::for_image(cfg.height, cfg.width, cfg.encoder.patch);
  const VariantFlags flags = flags_of(cfg.variant);
  Rng rng(mix_seed(cfg.seed, 0xa11));
  // Every variant draws the same stream; unused pieces are discarded.
  Tensor table = Tensor::create({m.grid_.tokens(), d_v}, rng.normal_vector(m.grid_.tokens() * d_v, cfg.learned_position_std),
                                !flags.use_fourier);
  if (!flags.use_fourier) m.position_table_ = table;
  m.fusion_ = FusionModule::init(cfg.fusion, d_v, d_t, rng, flags.use_fusion);
  m.decoder_ = Decoder::init(cfg.decoder, cfg.fusion.d_fuse, rng);
  return m;
}

VisualFeatures SegModel::encode_image(const FrozenEncoders& enc, const Tensor& image, const std::string& image_id) const {
  if (flags_of(cfg_.variant).use_fourier) {
    FourierConfig fc = cfg_.fourier;
    fc.d = enc.d_v();
    return enc.encode_image(image, image_id, fc);
  }
  VisualFeatures patches = enc.patch_embeddings(image, image_id);
  if (patches.grid.h != grid_.h || patches.grid.w != grid_.w) {
    throw Error(ErrorCode::ConfigMismatch, "learned position table covers a " + std::to_string(grid_.h) + "x" +
                                               std::to_string(grid_.w) + " grid, image has " +
                                               std::to_string(patches.grid.h) + "x" + std::to_string(patches.grid.w));
  }
  return VisualFeatures{enc.encode_tokens(add(patches.tokens, position_table_)), patches.grid};
}

Tensor SegModel::logits(const VisualFeatures& visual, const Tensor& text) const {
  FusedTokens fused = fusion_.fuse(visual.tokens, text);
  Tensor feat = decoder_.decode(fused.visual, visual.grid);
  const Tensor& rows = cfg_.decoder.use_fused_text ? fused.text : fusion_.align_channels(visual.tokens, text).second;
  return similarity_logits(feat, rows);
}

NamedTensors SegModel::parameters() const {
  NamedTensors out = fusion_.parameters();
  for (auto& p : decoder_.parameters()) out.push_back(std::move(p));
  if (position_table_.defined()) out.emplace_back("position_table", position_table_);
  return out;
}

std::size_t SegModel::parameter_count() const { return bl::parameter_count(parameters()); }

void SegModel::load_parameters(const NamedTensors& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  NamedTensors mine = parameters();
  if (by_name.size() != mine.size()) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint holds " + std::to_string(by_name.size()) + " tensors, model has " +
                                               std::to_string(mine.size()));
  }
  for (auto& [name, t] : mine) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::ConfigMismatch, "checkpoint lacks '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw Error(ErrorCode::ConfigMismatch, "'" + name + "' is " + shape_str(it->second->shape()) + ", model expects " +
                                                 shape_str(t.shape()));
    }
  }
  for (auto& [name, t] : mine) {
    const auto src = by_name[name]->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

}  // namespace bl
