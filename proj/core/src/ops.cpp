#include "bl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bl/error.hpp"

namespace bl {

using detail::TensorImpl;

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

// Returns the input's gradient buffer when it participates in backward, else nullptr.
double* grad_of(const ImplPtr& impl) { return impl->requires_grad ? impl->grad_buffer() : nullptr; }

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw Error(ErrorCode::AxisOutOfRange, std::string(op) + ": axis " + std::to_string(axis) + " for shape " +
                                               shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& o) {
    for (const ImplPtr& in : {ai, bi}) {
      if (double* g = grad_of(in)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& o) {
    if (double* g = grad_of(ai)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (double* g = grad_of(bi)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& o) {
    if (double* g = grad_of(ai)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bi->data[i];
    }
    if (double* g = grad_of(bi)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& t, double factor) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (double& v : out) v *= factor;
  ImplPtr ti = t.impl();
  return detail::make_result("scale", t.shape(), std::move(out), {t}, [ti, factor](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& t, double value) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (double& v : out) v += value;
  ImplPtr ti = t.impl();
  return detail::make_result("add_scalar", t.shape(), std::move(out), {t}, [ti](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  ImplPtr ai = a.impl(), bi = b.impl();
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](const TensorImpl& o) {
    if (double* g = grad_of(ai)) gemm_nt(o.grad.data(), bi->data.data(), g, m, n, k);
    if (double* g = grad_of(bi)) gemm_tn(ai->data.data(), o.grad.data(), g, k, m, n);
  });
}

Tensor transpose(const Tensor& t) {
  require_rank("transpose", t, 2);
  const std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<double> out(r * c);
  const auto d = t.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  ImplPtr ti = t.impl();
  return detail::make_result("transpose", {c, r}, std::move(out), {t}, [ti, r, c](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  require_rank("linear", bias, 1);
  const std::size_t n = x.dim(0), k = x.dim(1), m = weight.dim(1);
  if (weight.dim(0) != k || bias.dim(0) != m) {
    shape_error("linear", shape_str(x.shape()) + " * " + shape_str(weight.shape()) + " + " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * m);
  const auto bd = bias.data();
  for (std::size_t i = 0; i < n; ++i) std::copy(bd.begin(), bd.end(), out.begin() + static_cast<std::ptrdiff_t>(i * m));
  gemm_nn(x.data().data(), weight.data().data(), out.data(), n, k, m);
  ImplPtr xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  return detail::make_result("linear", {n, m}, std::move(out), {x, weight, bias},
                             [xi, wi, bi, n, k, m](const TensorImpl& o) {
                               if (double* g = grad_of(xi)) gemm_nt(o.grad.data(), wi->data.data(), g, n, m, k);
                               if (double* g = grad_of(wi)) gemm_tn(xi->data.data(), o.grad.data(), g, k, n, m);
                               if (double* g = grad_of(bi)) {
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < m; ++j) g[j] += o.grad[i * m + j];
                               }
                             });
}

Tensor gelu(const Tensor& t) {
  const auto d = t.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = 0.5 * d[i] * (1.0 + std::erf(d[i] * std::numbers::sqrt2 / 2.0));
  ImplPtr ti = t.impl();
  return detail::make_result("gelu", t.shape(), std::move(out), {t}, [ti](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double x = ti->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        g[i] += o.grad[i] * (cdf + x * pdf);
      }
    }
  });
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (double& v : out) v = std::clamp(v, lo, hi);
  ImplPtr ti = t.impl();
  return detail::make_result("clamp", t.shape(), std::move(out), {t}, [ti, lo, hi](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double x = ti->data[i];
        if (x > lo && x < hi) g[i] += o.grad[i];
      }
    }
  });
}

Tensor sigmoid(const Tensor& t) {
  const auto d = t.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d[i];
    if (x >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  ImplPtr ti = t.impl();
  return detail::make_result("sigmoid", t.shape(), std::move(out), {t}, [ti](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
    }
  });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  const AxisSplit s = split_axis("softmax", t.shape(), axis);
  const auto d = t.data();
  std::vector<double> out(d.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = d[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, d[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(d[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  ImplPtr ti = t.impl();
  return detail::make_result("softmax", t.shape(), std::move(out), {t}, [ti, s](const TensorImpl& o) {
    double* g = grad_of(ti);
    if (!g) return;
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = ou * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += o.grad[base + l * s.inner] * o.data[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          g[i] += o.data[i] * (o.grad[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias, double eps) {
  if (t.rank() == 0) shape_error("layer_norm", "scalar input");
  if (!(eps > 0.0)) throw Error(ErrorCode::BadConfig, "layer_norm: eps must be positive");
  const std::size_t d = t.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    shape_error("layer_norm", "gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                                  " vs last dim " + std::to_string(d));
  }
  const std::size_t rows = t.numel() / d;
  const auto x = t.data(), ga = gain.data(), be = bias.data();
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      xhat[i] = (row[j] - mu) * inv_std[r];
      out[i] = xhat[i] * ga[j] + be[j];
    }
  }
  ImplPtr ti = t.impl(), gi = gain.impl(), bi = bias.impl();
  return detail::make_result(
      "layer_norm", t.shape(), std::move(out), {t, gain, bias},
      [ti, gi, bi, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
        double* gx = grad_of(ti);
        double* gg = grad_of(gi);
        double* gb = grad_of(bi);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            const double dxhat = o.grad[i] * gi->data[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[i];
            if (gg) gg[j] += o.grad[i] * xhat[i];
            if (gb) gb[j] += o.grad[i];
          }
          if (!gx) continue;
          mean_dxhat *= inv_d;
          mean_dxhat_xhat *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            const double dxhat = o.grad[i] * gi->data[j];
            gx[i] += inv_std[r] * (dxhat - mean_dxhat - xhat[i] * mean_dxhat_xhat);
          }
        }
      });
}

Tensor l2_normalize(const Tensor& t, std::size_t axis) {
  const AxisSplit s = split_axis("l2_normalize", t.shape(), axis);
  const auto x = t.data();
  std::vector<double> out(x.size(), 0.0);
  std::vector<double> norms(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double sq = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) sq += x[base + l * s.inner] * x[base + l * s.inner];
      const double norm = std::sqrt(sq);
      norms[o * s.inner + in] = norm;
      if (norm == 0.0) continue;
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] = x[base + l * s.inner] / norm;
    }
  }
  ImplPtr ti = t.impl();
  return detail::make_result("l2_normalize", t.shape(), std::move(out), {t},
                             [ti, s, norms = std::move(norms)](const TensorImpl& o) {
                               double* g = grad_of(ti);
                               if (!g) return;
                               for (std::size_t ou = 0; ou < s.outer; ++ou) {
                                 for (std::size_t in = 0; in < s.inner; ++in) {
                                   const double norm = norms[ou * s.inner + in];
                                   if (norm == 0.0) continue;
                                   const std::size_t base = ou * s.len * s.inner + in;
                                   double dot = 0.0;
                                   for (std::size_t l = 0; l < s.len; ++l) {
                                     dot += o.grad[base + l * s.inner] * o.data[base + l * s.inner];
                                   }
                                   for (std::size_t l = 0; l < s.len; ++l) {
                                     const std::size_t i = base + l * s.inner;
                                     g[i] += (o.grad[i] - o.data[i] * dot) / norm;
                                   }
                                 }
                               }
                             });
}

Tensor sum(const Tensor& t) {
  double total = 0.0;
  for (double v : t.data()) total += v;
  ImplPtr ti = t.impl();
  return detail::make_result("sum", {}, {total}, {t}, [ti](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < ti->data.size(); ++i) g[i] += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& t) {
  double total = 0.0;
  for (double v : t.data()) total += v;
  const double n = static_cast<double>(t.numel());
  ImplPtr ti = t.impl();
  return detail::make_result("mean", {}, {total / n}, {t}, [ti, n](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      const double share = o.grad[0] / n;
      for (std::size_t i = 0; i < ti->data.size(); ++i) g[i] += share;
    }
  });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) shape_error("reshape", shape_str(t.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(t.data().begin(), t.data().end());
  ImplPtr ti = t.impl();
  return detail::make_result("reshape", std::move(shape), std::move(out), {t}, [ti](const TensorImpl& o) {
    if (double* g = grad_of(ti)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  if (t.rank() == 0) shape_error("slice_rows", "scalar input");
  const std::size_t rows = t.dim(0);
  if (count == 0 || begin + count > rows) {
    shape_error("slice_rows", "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") of " +
                                  shape_str(t.shape()));
  }
  const std::size_t stride = t.numel() / rows;
  Shape shape = t.shape();
  shape[0] = count;
  const auto d = t.data();
  std::vector<double> out(d.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          d.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
  ImplPtr ti = t.impl();
  return detail::make_result("slice_rows", std::move(shape), std::move(out), {t},
                             [ti, offset = begin * stride](const TensorImpl& o) {
                               if (double* g = grad_of(ti)) {
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) g[offset + i] += o.grad[i];
                               }
                             });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) shape_error("concat_rows", "scalar input");
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    Shape trailing = p.shape();
    if (trailing.size() != shape.size() || !std::equal(trailing.begin() + 1, trailing.end(), shape.begin() + 1)) {
      shape_error("concat_rows", shape_str(p.shape()) + " vs " + shape_str(shape));
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  std::vector<ImplPtr> impls;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  return detail::make_result("concat_rows", std::move(shape), std::move(out), parts, [impls](const TensorImpl& o) {
    std::size_t offset = 0;
    for (const ImplPtr& in : impls) {
      const std::size_t n = in->data.size();
      if (double* g = grad_of(in)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t count) {
  require_rank("slice_cols", t, 2);
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  if (count == 0 || begin + count > cols) {
    shape_error("slice_cols", "cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") of " +
                                  shape_str(t.shape()));
  }
  const auto d = t.data();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = d[r * cols + begin + c];
  ImplPtr ti = t.impl();
  return detail::make_result("slice_cols", {rows, count}, std::move(out), {t},
                             [ti, rows, cols, begin, count](const TensorImpl& o) {
                               if (double* g = grad_of(ti)) {
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < count; ++c) g[r * cols + begin + c] += o.grad[r * count + c];
                               }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.dim(0) != rows) shape_error("concat_cols", shape_str(p.shape()) + " vs rows " + std::to_string(rows));
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::vector<ImplPtr> impls;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.dim(1);
    const auto d = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c) out[r * cols + offset + c] = d[r * pc + c];
    offset += pc;
    impls.push_back(p.impl());
  }
  return detail::make_result("concat_cols", {rows, cols}, std::move(out), parts,
                             [impls, rows, cols](const TensorImpl& o) {
                               std::size_t off = 0;
                               for (const ImplPtr& in : impls) {
                                 const std::size_t pc = in->shape[1];
                                 if (double* g = grad_of(in)) {
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += o.grad[r * cols + off + c];
                                 }
                                 off += pc;
                               }
                             });
}

Tensor upsample_nearest2x(const Tensor& t) {
  require_rank("upsample_nearest2x", t, 3);
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto d = t.data();
  std::vector<double> out(oh * ow * c);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const double* src = d.data() + ((y / 2) * w + x / 2) * c;
      std::copy(src, src + c, out.begin() + static_cast<std::ptrdiff_t>((y * ow + x) * c));
    }
  ImplPtr ti = t.impl();
  return detail::make_result("upsample_nearest2x", {oh, ow, c}, std::move(out), {t},
                             [ti, w, c, oh, ow](const TensorImpl& o) {
                               double* g = grad_of(ti);
                               if (!g) return;
                               for (std::size_t y = 0; y < oh; ++y)
                                 for (std::size_t x = 0; x < ow; ++x) {
                                   double* dst = g + ((y / 2) * w + x / 2) * c;
                                   const double* src = o.grad.data() + (y * ow + x) * c;
                                   for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
                                 }
                             });
}

Tensor conv2d_3x3(const Tensor& t, const Tensor& weight, const Tensor& bias) {
  require_rank("conv2d_3x3", t, 3);
  require_rank("conv2d_3x3", weight, 2);
  require_rank("conv2d_3x3", bias, 1);
  const std::size_t h = t.dim(0), w = t.dim(1), cin = t.dim(2);
  const std::size_t cout = weight.dim(1);
  if (weight.dim(0) != 9 * cin || bias.dim(0) != cout) {
    shape_error("conv2d_3x3", "input " + shape_str(t.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                                  shape_str(bias.shape()));
  }
  const std::size_t pixels = h * w, patch = 9 * cin;
  // im2col: one row of 9*Cin taps per output pixel, zero outside the map.
  std::vector<double> cols(pixels * patch, 0.0);
  const auto x = t.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      double* row = cols.data() + (y * w + xx) * patch;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* src = x.data() + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * cin;
          std::copy(src, src + cin, row + (ky * 3 + kx) * cin);
        }
      }
    }
  std::vector<double> out(pixels * cout);
  const auto bd = bias.data();
  for (std::size_t p = 0; p < pixels; ++p)
    std::copy(bd.begin(), bd.end(), out.begin() + static_cast<std::ptrdiff_t>(p * cout));
  gemm_nn(cols.data(), weight.data().data(), out.data(), pixels, patch, cout);

  ImplPtr ti = t.impl(), wi = weight.impl(), bi = bias.impl();
  return detail::make_result(
      "conv2d_3x3", {h, w, cout}, std::move(out), {t, weight, bias},
      [ti, wi, bi, h, w, cin, cout, pixels, patch, cols = std::move(cols)](const TensorImpl& o) {
        if (double* g = grad_of(wi)) gemm_tn(cols.data(), o.grad.data(), g, patch, pixels, cout);
        if (double* g = grad_of(bi)) {
          for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t c = 0; c < cout; ++c) g[c] += o.grad[p * cout + c];
        }
        double* gx = grad_of(ti);
        if (!gx) return;
        std::vector<double> dcols(pixels * patch, 0.0);
        gemm_nt(o.grad.data(), wi->data.data(), dcols.data(), pixels, cout, patch);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx) {
            const double* row = dcols.data() + (y * w + xx) * patch;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                double* dst = gx + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * cin;
                const double* src = row + (ky * 3 + kx) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
      });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape("bce_with_logits", logits, targets);
  const auto z = logits.data(), y = targets.data();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const double n = static_cast<double>(z.size());
  ImplPtr li = logits.impl(), yi = targets.impl();
  return detail::make_result("bce_with_logits", {}, {total / n}, {logits}, [li, yi, n](const TensorImpl& o) {
    double* g = grad_of(li);
    if (!g) return;
    const double share = o.grad[0] / n;
    for (std::size_t i = 0; i < li->data.size(); ++i) {
      const double zi = li->data[i];
      const double p = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
      g[i] += share * (p - yi->data[i]);
    }
  });
}

}  // namespace bl
