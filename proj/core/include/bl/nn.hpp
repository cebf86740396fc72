#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bl/rng.hpp"
#include "bl/tensor.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(Rng& rng, std::size_t in, std::size_t out, double weight_std, bool trainable);
  [[nodiscard]] Tensor operator()(const Tensor& x) const;
  [[nodiscard]] std::size_t in_dim() const { return weight.dim(0); }
  [[nodiscard]] std::size_t out_dim() const { return weight.dim(1); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Linear -> GELU -> Linear.
struct Mlp2 {
  Linear first;
  Linear second;

  static Mlp2 init(Rng& rng, std::size_t in, std::size_t out, bool trainable);
  [[nodiscard]] Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Pre-norm encoder layer: x + Attn(LN(x)), then x + FFN(LN(x)).
struct TransformerLayer {
  std::size_t heads = 1;
  Tensor q, k, v, o;             // [d, d]
  Tensor ffn_w1, ffn_b1;         // [d, r*d], [r*d]
  Tensor ffn_w2, ffn_b2;         // [r*d, d], [d]
  Tensor ln1_gain, ln1_bias;     // [d]
  Tensor ln2_gain, ln2_bias;     // [d]

  /// weight_std <= 0 selects 1/sqrt(fan_in) per matrix.
  static TransformerLayer init(Rng& rng, std::size_t d, std::size_t heads, std::size_t mlp_ratio, double weight_std,
                               bool trainable);
  [[nodiscard]] std::size_t dim() const { return q.dim(0); }
  /// x is [n, d]. When `attention` is non-null, each head's [n, n] weights are appended.
  [[nodiscard]] Tensor operator()(const Tensor& x, std::vector<Tensor>* attention = nullptr) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

std::size_t parameter_count(const NamedTensors& params);

}  // namespace bl
