#include "bl/seg_head.hpp"

#include <cmath>

#include "bl/error.hpp"
#include "bl/ops.hpp"

namespace bl {

void DecoderConfig::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorCode::NonPositiveTau, "tau must be positive, got " + std::to_string(tau));
  if (channels.size() != stages) {
    throw Error(ErrorCode::BadConfig, "decoder: " + std::to_string(channels.size()) + " channel widths for " +
                                          std::to_string(stages) + " stages");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0) throw Error(ErrorCode::BadConfig, "decoder: zero channel width");
    if (i > 0 && channels[i] > channels[i - 1]) throw Error(ErrorCode::BadConfig, "decoder: channels must not increase");
  }
  auto check = [](double t) {
    if (!(t > 0.0 && t < 1.0)) throw Error(ErrorCode::BadConfig, "threshold must lie in (0,1), got " + std::to_string(t));
  };
  check(threshold);
  for (const auto& [name, t] : class_thresholds) check(t);
  if (!(projection_scale > 0.0)) throw Error(ErrorCode::BadConfig, "decoder: projection_scale must be positive");
}

double DecoderConfig::threshold_for(const std::string& category) const {
  auto it = class_thresholds.find(category);
  return it == class_thresholds.end() ? threshold : it->second;
}

Decoder Decoder::init(const DecoderConfig& cfg, std::size_t d_fuse, Rng& rng) {
  cfg.validate();
  Decoder dec;
  dec.cfg_ = cfg;
  std::size_t cin = d_fuse;
  for (std::size_t c : cfg.channels) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(9 * cin));
    dec.conv_weights_.push_back(Tensor::create({9 * cin, c}, rng.normal_vector(9 * cin * c, stddev), true));
    dec.conv_biases_.push_back(Tensor::zeros({c}, true));
    cin = c;
  }
  dec.projection_ = Linear::init(rng, cin, d_fuse, cfg.projection_scale / std::sqrt(static_cast<double>(cin)), true);
  return dec;
}

Tensor Decoder::decode(const Tensor& tokens, const PatchGrid& grid) const {
  const std::size_t d = d_fuse();
  if (tokens.rank() != 2 || tokens.dim(0) != grid.tokens() || tokens.dim(1) != d) {
    throw Error(ErrorCode::ShapeMismatch, "decode: tokens " + shape_str(tokens.shape()) + " for grid " +
                                              std::to_string(grid.h) + "x" + std::to_string(grid.w) + " width " +
                                              std::to_string(d));
  }
  if (grid.p != (std::size_t{1} << cfg_.stages)) {
    throw Error(ErrorCode::StageMismatch, std::to_string(cfg_.stages) + " upsampling stages cannot cover patch size " +
                                              std::to_string(grid.p));
  }
  Tensor base = reshape(tokens, {grid.h, grid.w, d});
  Tensor x = base;
  for (std::size_t s = 0; s < cfg_.stages; ++s) {
    x = gelu(conv2d_3x3(upsample_nearest2x(x), conv_weights_[s], conv_biases_[s]));
  }
  const std::size_t hh = x.dim(0), ww = x.dim(1), c = x.dim(2);
  Tensor out = reshape(projection_(reshape(x, {hh * ww, c})), {hh, ww, d});
  if (cfg_.skip) {
    Tensor up = base;
    for (std::size_t s = 0; s < cfg_.stages; ++s) up = upsample_nearest2x(up);
    out = add(out, up);
  }
  return out;
}

NamedTensors Decoder::parameters() const {
  NamedTensors out;
  for (std::size_t s = 0; s < conv_weights_.size(); ++s) {
    out.emplace_back("decoder.conv." + std::to_string(s) + ".w", conv_weights_[s]);
    out.emplace_back("decoder.conv." + std::to_string(s) + ".b", conv_biases_[s]);
  }
  projection_.collect("decoder.proj", out);
  return out;
}

Tensor similarity_logits(const Tensor& feat_map, const Tensor& text) {
  if (feat_map.rank() != 3 || text.rank() != 2 || feat_map.dim(2) != text.dim(1)) {
    throw Error(ErrorCode::DimensionMismatch, "similarity_logits: features " + shape_str(feat_map.shape()) +
                                                  " vs text " + shape_str(text.shape()));
  }
  const std::size_t h = feat_map.dim(0), w = feat_map.dim(1), d = feat_map.dim(2), c = text.dim(0);
  Tensor pixels = l2_normalize(reshape(feat_map, {h * w, d}), 1);
  Tensor rows = l2_normalize(text, 1);
  Tensor cos = matmul(rows, transpose(pixels));
  return reshape(clamp(cos, -1.0, 1.0), {c, h, w});
}

LabelMap argmax_labels(const Tensor& probs, const std::vector<double>& thresholds) {
  if (probs.rank() != 3 || thresholds.size() != probs.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "argmax_labels: probs " + shape_str(probs.shape()) + " with " +
                                              std::to_string(thresholds.size()) + " thresholds");
  }
  const std::size_t c = probs.dim(0), h = probs.dim(1), w = probs.dim(2), n = h * w;
  LabelMap out(h, w);
  const auto p = probs.data();
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1.0;
    std::int32_t label = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = p[k * n + i];
      if (v >= thresholds[k] && v > best) {
        best = v;
        label = static_cast<std::int32_t>(k + 1);
      }
    }
    out.labels[i] = label;
  }
  return out;
}

PredictionSet predict_masks(const Tensor& logits, const DecoderConfig& cfg, const std::vector<std::string>& categories) {
  if (!(cfg.tau > 0.0)) throw Error(ErrorCode::NonPositiveTau, "tau must be positive, got " + std::to_string(cfg.tau));
  if (logits.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "predict_masks: logits " + shape_str(logits.shape()));
  const std::size_t c = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  if (!categories.empty() && categories.size() != c) {
    throw Error(ErrorCode::ShapeMismatch, "predict_masks: " + std::to_string(categories.size()) + " names for " +
                                              std::to_string(c) + " logit maps");
  }
  PredictionSet out;
  out.categories = categories;
  for (std::size_t k = 0; k < c; ++k) out.thresholds.push_back(categories.empty() ? cfg.threshold : cfg.threshold_for(categories[k]));
  {
    NoGradGuard guard;
    out.probs = sigmoid(scale(logits, 1.0 / cfg.tau));
  }
  std::vector<double> masks(c * n);
  const auto p = out.probs.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < n; ++i) masks[k * n + i] = p[k * n + i] >= out.thresholds[k] ? 1.0 : 0.0;
  out.masks = Tensor::create(logits.shape(), std::move(masks));
  out.labels = argmax_labels(out.probs, out.thresholds);
  return out;
}

std::map<std::string, double> calibrate_thresholds(const std::vector<PredictionSet>& predictions,
                                                   const std::vector<LabelMap>& truth, const std::vector<double>& grid) {
  if (predictions.size() != truth.size()) {
    throw Error(ErrorCode::ShapeMismatch, "calibrate_thresholds: prediction/truth counts differ");
  }
  std::vector<double> candidates = grid;
  if (candidates.empty()) {
    for (int i = 1; i <= 19; ++i) candidates.push_back(0.05 * i);
  }
  // name -> per-candidate (intersection, union)
  std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> counts;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const auto& ps = predictions[s];
    const std::size_t n = truth[s].size();
    if (ps.probs.numel() != ps.categories.size() * n) {
      throw Error(ErrorCode::ShapeMismatch, "calibrate_thresholds: probability map does not match ground truth");
    }
    const auto p = ps.probs.data();
    for (std::size_t k = 0; k < ps.categories.size(); ++k) {
      auto& slot = counts[ps.categories[k]];
      slot.resize(candidates.size());
      for (std::size_t t = 0; t < candidates.size(); ++t) {
        for (std::size_t i = 0; i < n; ++i) {
          const bool pred = p[k * n + i] >= candidates[t];
          const bool gt = truth[s].labels[i] == static_cast<std::int32_t>(k + 1);
          slot[t].first += pred && gt;
          slot[t].second += pred || gt;
        }
      }
    }
  }
  std::map<std::string, double> out;
  for (const auto& [name, slot] : counts) {
    double best_iou = -1.0, best_t = 0.5;
    for (std::size_t t = 0; t < candidates.size(); ++t) {
      const double iou = slot[t].second == 0 ? 1.0 : static_cast<double>(slot[t].first) / static_cast<double>(slot[t].second);
      if (iou > best_iou + 1e-15 ||
          (std::abs(iou - best_iou) <= 1e-15 && std::abs(candidates[t] - 0.5) < std::abs(best_t - 0.5))) {
        best_iou = iou;
        best_t = candidates[t];
      }
    }
    out[name] = best_t;
  }
  return out;
}

}  // namespace bl
