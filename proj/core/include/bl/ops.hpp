#pragma once

#include <cstddef>
#include <vector>

#include "bl/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to scalar-tensor forms
// and the explicit row-bias in linear()/conv2d_3x3(); everything else needs
// matching shapes.
namespace bl {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
Tensor add_scalar(const Tensor& t, double value);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& t);
/// x [n,k] * w [k,m] + b [m] -> [n,m]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor gelu(const Tensor& t);
/// Gradient passes only where lo < t < hi.
Tensor clamp(const Tensor& t, double lo, double hi);
Tensor sigmoid(const Tensor& t);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& t, std::size_t axis);

/// Normalizes over the last axis, then applies gain/bias (both [last_dim]).
Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Unit Euclidean norm along `axis`. All-zero slices stay zero (and pass zero gradient).
Tensor l2_normalize(const Tensor& t, std::size_t axis);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

Tensor reshape(const Tensor& t, Shape shape);

/// Row ranges along axis 0; trailing dims are kept.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Column ranges of a 2-D tensor.
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// [H,W,C] -> [2H,2W,C], nearest neighbour.
Tensor upsample_nearest2x(const Tensor& t);

/// Same-padded 3x3 convolution over an [H,W,Cin] map.
/// weight is [9*Cin, Cout] laid out as ((ky*3 + kx)*Cin + c_in, c_out); bias is [Cout].
Tensor conv2d_3x3(const Tensor& t, const Tensor& weight, const Tensor& bias);

/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
/// Targets never receive gradient.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace bl
