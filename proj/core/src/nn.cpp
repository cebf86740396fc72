#include "bl/nn.hpp"

#include <cmath>

#include "bl/error.hpp"
#include "bl/ops.hpp"

namespace bl {

namespace {

Tensor randn(Rng& rng, Shape shape, double stddev, bool trainable) {
  const std::size_t n = shape_numel(shape);
  return Tensor::create(std::move(shape), rng.normal_vector(n, stddev), trainable);
}

}  // namespace

Linear Linear::init(Rng& rng, std::size_t in, std::size_t out, double weight_std, bool trainable) {
  return Linear{randn(rng, {in, out}, weight_std, trainable), Tensor::zeros({out}, trainable)};
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".w", weight);
  out.emplace_back(prefix + ".b", bias);
}

Mlp2 Mlp2::init(Rng& rng, std::size_t in, std::size_t out, bool trainable) {
  Linear first = Linear::init(rng, in, out, std::sqrt(2.0 / static_cast<double>(in)), trainable);
  Linear second = Linear::init(rng, out, out, std::sqrt(1.0 / static_cast<double>(out)), trainable);
  return Mlp2{std::move(first), std::move(second)};
}

Tensor Mlp2::operator()(const Tensor& x) const { return second(gelu(first(x))); }

void Mlp2::collect(const std::string& prefix, NamedTensors& out) const {
  first.collect(prefix + ".0", out);
  second.collect(prefix + ".1", out);
}

TransformerLayer TransformerLayer::init(Rng& rng, std::size_t d, std::size_t heads, std::size_t mlp_ratio,
                                        double weight_std, bool trainable) {
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorCode::BadConfig, "transformer: d=" + std::to_string(d) + " not divisible by heads=" +
                                          std::to_string(heads));
  }
  if (mlp_ratio == 0) throw Error(ErrorCode::BadConfig, "transformer: mlp_ratio must be positive");
  const std::size_t hidden = mlp_ratio * d;
  const double a = weight_std > 0 ? weight_std : 1.0 / std::sqrt(static_cast<double>(d));
  const double b = weight_std > 0 ? weight_std : 1.0 / std::sqrt(static_cast<double>(hidden));
  TransformerLayer layer;
  layer.heads = heads;
  layer.q = randn(rng, {d, d}, a, trainable);
  layer.k = randn(rng, {d, d}, a, trainable);
  layer.v = randn(rng, {d, d}, a, trainable);
  layer.o = randn(rng, {d, d}, a, trainable);
  layer.ffn_w1 = randn(rng, {d, hidden}, a, trainable);
  layer.ffn_b1 = Tensor::zeros({hidden}, trainable);
  layer.ffn_w2 = randn(rng, {hidden, d}, b, trainable);
  layer.ffn_b2 = Tensor::zeros({d}, trainable);
  layer.ln1_gain = Tensor::full({d}, 1.0, trainable);
  layer.ln1_bias = Tensor::zeros({d}, trainable);
  layer.ln2_gain = Tensor::full({d}, 1.0, trainable);
  layer.ln2_bias = Tensor::zeros({d}, trainable);
  return layer;
}

Tensor TransformerLayer::operator()(const Tensor& x, std::vector<Tensor>* attention) const {
  const std::size_t d = dim();
  if (x.rank() != 2 || x.dim(1) != d) {
    throw Error(ErrorCode::DimensionMismatch, "transformer: tokens " + shape_str(x.shape()) + " for width " +
                                                  std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor y = layer_norm(x, ln1_gain, ln1_bias);
  Tensor qs = matmul(y, q), ks = matmul(y, k), vs = matmul(y, v);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? qs : slice_cols(qs, h * dh, dh);
    Tensor kh = heads == 1 ? ks : slice_cols(ks, h * dh, dh);
    Tensor vh = heads == 1 ? vs : slice_cols(vs, h * dh, dh);
    Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), 1);
    if (attention) attention->push_back(weights);
    head_out.push_back(matmul(weights, vh));
  }
  Tensor attended = heads == 1 ? head_out.front() : concat_cols(head_out);
  Tensor h1 = add(x, matmul(attended, o));

  Tensor y2 = layer_norm(h1, ln2_gain, ln2_bias);
  Tensor ffn = linear(gelu(linear(y2, ffn_w1, ffn_b1)), ffn_w2, ffn_b2);
  return add(h1, ffn);
}

void TransformerLayer::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".attn.q", q);
  out.emplace_back(prefix + ".attn.k", k);
  out.emplace_back(prefix + ".attn.v", v);
  out.emplace_back(prefix + ".attn.o", o);
  out.emplace_back(prefix + ".ffn.w1", ffn_w1);
  out.emplace_back(prefix + ".ffn.b1", ffn_b1);
  out.emplace_back(prefix + ".ffn.w2", ffn_w2);
  out.emplace_back(prefix + ".ffn.b2", ffn_b2);
  out.emplace_back(prefix + ".ln1.gain", ln1_gain);
  out.emplace_back(prefix + ".ln1.bias", ln1_bias);
  out.emplace_back(prefix + ".ln2.gain", ln2_gain);
  out.emplace_back(prefix + ".ln2.bias", ln2_bias);
}

std::size_t parameter_count(const NamedTensors& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace bl
