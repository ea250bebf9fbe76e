#pragma once

// Forward ops with their reverse-mode rules. Each op checks its shape
// contract and records a backward closure when any input requires grad.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bcd/tensor.hpp"

namespace bcd {

/// Added to the denominators of L1/L2 normalizations and cosine terms.
inline constexpr double kNormEps = 1e-12;

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_rank(const Tensor& a, std::size_t r, const char* op) {
  require(a.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " +
                             shape_str(a.shape()));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto& xv = x.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, op, [deriv](Node& self) {
    auto& g = grad_of(self, 0);
    const auto& xin = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(xin[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      auto& g = detail::grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = detail::grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) {
      auto& g = detail::grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = detail::grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "div", [](detail::Node& self) {
    const auto& bv = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) {
      auto& g = detail::grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = detail::grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / bv[i];
    }
  });
}

/// Elementwise maximum; ties send the gradient to `a`.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "maximum");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "maximum", [](detail::Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      auto& g = detail::grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool a_wins = av[i] >= bv[i];
        if ((k == 0) == a_wins) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// Natural log; the caller guarantees positive inputs (add an epsilon first).
inline Tensor log(const Tensor& x) {
  for (double v : x.values()) require(v > 0.0, "log: non-positive input " + std::to_string(v));
  return detail::unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::make_result({1}, {s}, {x}, "sum", [](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Sums out one axis; the result drops that axis (rank-1 inputs give shape [1]).
inline Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "sum_axis: axis out of range for shape " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t len = x.dim(axis);
  Shape out_shape;
  for (std::size_t a = 0; a < x.rank(); ++a)
    if (a != axis) out_shape.push_back(x.dim(a));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.vec();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  return Tensor::make_result(out_shape, std::move(out), {x}, "sum_axis", [outer, len, inner](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
  });
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

/// Averages over every axis except `axis`; result has shape [x.dim(axis)].
inline Tensor mean_keep_axis(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "mean_keep_axis: axis out of range for shape " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t len = x.dim(axis);
  const double inv = 1.0 / static_cast<double>(outer * inner);
  std::vector<double> out(len, 0.0);
  const auto& xv = x.vec();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      double s = 0.0;
      const double* p = xv.data() + (o * len + l) * inner;
      for (std::size_t i = 0; i < inner; ++i) s += p[i];
      out[l] += s;
    }
  for (auto& v : out) v *= inv;
  return Tensor::make_result({len}, std::move(out), {x}, "mean_keep_axis",
                             [outer, len, inner, inv](detail::Node& self) {
                               auto& g = detail::grad_of(self, 0);
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t l = 0; l < len; ++l) {
                                   const double d = self.grad[l] * inv;
                                   double* p = g.data() + (o * len + l) * inner;
                                   for (std::size_t i = 0; i < inner; ++i) p[i] += d;
                                 }
                             });
}

// ------------------------------------------------------------------ structure

inline Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return Tensor::make_result(std::move(shape), x.vec(), {x}, "reshape", [](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return Tensor::make_result({n, m}, std::move(out), {x}, "transpose", [m, n](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts.front().shape();
  require(axis < ref.size(), "concat: axis out of range for shape " + shape_str(ref));
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t a = 0; ok && a < ref.size(); ++a) ok = a == axis || p.dim(a) == ref[a];
    require(ok, "concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (std::size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.vec().data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
    off += len;
  }
  return Tensor::make_result(out_shape, std::move(out), parts, "concat",
                             [outer, inner, total, offsets](detail::Node& self) {
                               for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                 if (!detail::wants_grad(self, k)) continue;
                                 auto& g = detail::grad_of(self, k);
                                 const std::size_t len = g.size() / (outer * inner);
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   const double* src = self.grad.data() + (o * total + offsets[k]) * inner;
                                   double* dst = g.data() + o * len * inner;
                                   for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

/// Half-open range [begin, end) along one axis.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < x.rank(), "slice: axis out of range for shape " + shape_str(x.shape()));
  require(begin < end && end <= x.dim(axis), "slice: bad range [" + std::to_string(begin) + ", " +
                                                 std::to_string(end) + ") for shape " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t len = x.dim(axis), width = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = width;
  std::vector<double> out(outer * width * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.vec().data() + (o * len + begin) * inner, width * inner, out.data() + o * width * inner);
  return Tensor::make_result(out_shape, std::move(out), {x}, "slice",
                             [outer, inner, len, begin, width](detail::Node& self) {
                               auto& g = detail::grad_of(self, 0);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* src = self.grad.data() + o * width * inner;
                                 double* dst = g.data() + (o * len + begin) * inner;
                                 for (std::size_t i = 0; i < width * inner; ++i) dst[i] += src[i];
                               }
                             });
}

/// Picks elements by flat index into a rank-1 result.
inline Tensor gather(const Tensor& x, std::vector<std::size_t> indices) {
  require(!indices.empty(), "gather: empty index list");
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < x.numel(), "gather: index " + std::to_string(indices[i]) + " out of range for shape " +
                                        shape_str(x.shape()));
    out[i] = x[indices[i]];
  }
  const std::size_t n = indices.size();
  return Tensor::make_result({n}, std::move(out), {x}, "gather", [indices = std::move(indices)](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    for (std::size_t i = 0; i < indices.size(); ++i) g[indices[i]] += self.grad[i];
  });
}

/// N×C×H×W -> N×(C·f·f)×(H/f)×(W/f); output channel c·f·f + dy·f + dx.
inline Tensor space_to_depth(const Tensor& x, std::size_t f) {
  detail::require_rank(x, 4, "space_to_depth");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(f >= 1 && h % f == 0 && w % f == 0,
          "space_to_depth: factor " + std::to_string(f) + " does not divide " + shape_str(x.shape()));
  const std::size_t ho = h / f, wo = w / f, co = c * f * f;
  std::vector<std::size_t> src_index(x.numel());
  std::vector<double> out(x.numel());
  std::size_t dst = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx)
          for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx, ++dst) {
              const std::size_t src = ((i * c + ch) * h + y * f + dy) * w + xx * f + dx;
              src_index[dst] = src;
              out[dst] = x[src];
            }
  return Tensor::make_result({n, co, ho, wo}, std::move(out), {x}, "space_to_depth",
                             [src_index = std::move(src_index)](detail::Node& self) {
                               auto& g = detail::grad_of(self, 0);
                               for (std::size_t i = 0; i < src_index.size(); ++i) g[src_index[i]] += self.grad[i];
                             });
}

// ------------------------------------------------------------------ linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  require(a.dim(1) == b.dim(0), "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::MatMap(out.data(), m, n).noalias() =
      detail::ConstMatMap(a.vec().data(), m, k) * detail::ConstMatMap(b.vec().data(), k, n);
  return Tensor::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, "matmul", [m, k, n](detail::Node& self) {
    detail::ConstMatMap dy(self.grad.data(), m, n);
    if (detail::wants_grad(self, 0)) {
      auto& g = detail::grad_of(self, 0);
      detail::MatMap(g.data(), m, k).noalias() += dy * detail::ConstMatMap(self.inputs[1]->value.data(), k, n).transpose();
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = detail::grad_of(self, 1);
      detail::MatMap(g.data(), k, n).noalias() += detail::ConstMatMap(self.inputs[0]->value.data(), m, k).transpose() * dy;
    }
  });
}

/// 1×1 convolution: x N×Ci×H×W, weight Co×Ci, optional bias Co.
inline Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  detail::require_rank(x, 4, "conv1x1");
  detail::require_rank(weight, 2, "conv1x1 weight");
  require(weight.dim(1) == x.dim(1), "conv1x1: weight " + shape_str(weight.shape()) + " does not match input " +
                                         shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape() == Shape{weight.dim(0)}, "conv1x1: bias shape " + shape_str(bias.shape()));
  const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
  const auto ci = static_cast<Eigen::Index>(x.dim(1)), co = static_cast<Eigen::Index>(weight.dim(0)),
             p = static_cast<Eigen::Index>(hw);
  std::vector<double> out(n * static_cast<std::size_t>(co) * hw);
  detail::ConstMatMap w(weight.vec().data(), co, ci);
  for (std::size_t i = 0; i < n; ++i) {
    detail::MatMap y(out.data() + i * co * hw, co, p);
    y.noalias() = w * detail::ConstMatMap(x.vec().data() + i * ci * hw, ci, p);
    if (has_bias) y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.vec().data(), co);
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result({n, weight.dim(0), x.dim(2), x.dim(3)}, std::move(out), inputs, "conv1x1",
                             [n, ci, co, p, has_bias](detail::Node& self) {
                               const auto& xv = self.inputs[0]->value;
                               detail::ConstMatMap w(self.inputs[1]->value.data(), co, ci);
                               const std::size_t in_stride = ci * p, out_stride = co * p;
                               if (detail::wants_grad(self, 0)) {
                                 auto& g = detail::grad_of(self, 0);
                                 for (std::size_t i = 0; i < n; ++i)
                                   detail::MatMap(g.data() + i * in_stride, ci, p).noalias() +=
                                       w.transpose() * detail::ConstMatMap(self.grad.data() + i * out_stride, co, p);
                               }
                               if (detail::wants_grad(self, 1)) {
                                 auto& g = detail::grad_of(self, 1);
                                 detail::MatMap gw(g.data(), co, ci);
                                 for (std::size_t i = 0; i < n; ++i)
                                   gw.noalias() += detail::ConstMatMap(self.grad.data() + i * out_stride, co, p) *
                                                   detail::ConstMatMap(xv.data() + i * in_stride, ci, p).transpose();
                               }
                               if (has_bias && detail::wants_grad(self, 2)) {
                                 auto& g = detail::grad_of(self, 2);
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (Eigen::Index c = 0; c < co; ++c) {
                                     const double* row = self.grad.data() + i * out_stride + c * p;
                                     double s = 0.0;
                                     for (Eigen::Index j = 0; j < p; ++j) s += row[j];
                                     g[c] += s;
                                   }
                               }
                             });
}

/// Scales channel c of image i by w[i, c] (w shaped N×C) or by w[c] (shaped C).
inline Tensor channel_scale(const Tensor& x, const Tensor& w) {
  detail::require_rank(x, 4, "channel_scale");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const bool shared = w.rank() == 1;
  require((shared && w.dim(0) == c) || (w.rank() == 2 && w.dim(0) == n && w.dim(1) == c),
          "channel_scale: weights " + shape_str(w.shape()) + " do not match features " + shape_str(x.shape()));
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double s = w[shared ? ch : i * c + ch];
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) out[base + j] = s * x[base + j];
    }
  return Tensor::make_result(x.shape(), std::move(out), {x, w}, "channel_scale",
                             [n, c, hw, shared](detail::Node& self) {
                               const auto& xv = self.inputs[0]->value;
                               const auto& wv = self.inputs[1]->value;
                               const bool gx = detail::wants_grad(self, 0), gw = detail::wants_grad(self, 1);
                               std::vector<double>* dx = gx ? &detail::grad_of(self, 0) : nullptr;
                               std::vector<double>* dw = gw ? &detail::grad_of(self, 1) : nullptr;
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t ch = 0; ch < c; ++ch) {
                                   const std::size_t widx = shared ? ch : i * c + ch;
                                   const std::size_t base = (i * c + ch) * hw;
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < hw; ++j) {
                                     if (gx) (*dx)[base + j] += self.grad[base + j] * wv[widx];
                                     acc += self.grad[base + j] * xv[base + j];
                                   }
                                   if (gw) (*dw)[widx] += acc;
                                 }
                             });
}

// ------------------------------------------------------------------ pooling

/// N×C×H×W -> N×C maximum over H×W; ties resolve to the lowest flat index,
/// which is also the sole recipient of the subgradient.
inline Tensor global_max_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_max_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c);
  std::vector<std::size_t> arg(n * c);
  const auto& xv = x.vec();
  for (std::size_t k = 0; k < n * c; ++k) {
    const double* p = xv.data() + k * hw;
    std::size_t best = 0;
    for (std::size_t j = 1; j < hw; ++j)
      if (p[j] > p[best]) best = j;
    arg[k] = k * hw + best;
    out[k] = p[best];
  }
  return Tensor::make_result({n, c}, std::move(out), {x}, "global_max_pool",
                             [arg = std::move(arg)](detail::Node& self) {
                               auto& g = detail::grad_of(self, 0);
                               for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
                             });
}

inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(hw);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t k = 0; k < n * c; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[k * hw + j];
    out[k] = s * inv;
  }
  return Tensor::make_result({n, c}, std::move(out), {x}, "global_avg_pool", [hw, inv](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    for (std::size_t k = 0; k < self.grad.size(); ++k)
      for (std::size_t j = 0; j < hw; ++j) g[k * hw + j] += self.grad[k] * inv;
  });
}

// ------------------------------------------------------------------ normalization

/// Running statistics of one batch-norm layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Batch normalization over N (and H×W for rank-4 inputs) per channel.
/// Training mode uses batch statistics and updates `state`; evaluation uses `state`.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                         bool training) {
  require(x.rank() == 2 || x.rank() == 4, "batch_norm: expected rank 2 or 4, got shape " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "batch_norm: affine parameters do not match channel count " + std::to_string(c));
  require(state.running_mean.size() == c, "batch_norm: running statistics sized for " +
                                              std::to_string(state.running_mean.size()) + " channels, input has " +
                                              std::to_string(c));
  if (training && n < 2) throw ContractViolation("batch_norm: training mode needs batch size >= 2, got 1");
  const std::size_t m = n * hw;
  std::vector<double> xhat(x.numel()), out(x.numel()), inv_std(c);
  const auto& xv = x.vec();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) s += xv[(i * c + ch) * hw + j];
      mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = xv[(i * c + ch) * hw + j] - mu;
          ss += d * d;
        }
      var = ss / static_cast<double>(m);
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      state.running_mean[ch] = (1.0 - kBatchNormMomentum) * state.running_mean[ch] + kBatchNormMomentum * mu;
      state.running_var[ch] = (1.0 - kBatchNormMomentum) * state.running_var[ch] + kBatchNormMomentum * unbiased;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + kBatchNormEps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t idx = (i * c + ch) * hw + j;
        xhat[idx] = (xv[idx] - mu) * inv_std[ch];
        out[idx] = gamma[ch] * xhat[idx] + beta[ch];
      }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
      [n, c, hw, m, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gv = self.inputs[1]->value;
        const auto& dy = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < hw; ++j) {
              const std::size_t idx = (i * c + ch) * hw + j;
              sum_dy += dy[idx];
              sum_dy_xhat += dy[idx] * xhat[idx];
            }
          if (detail::wants_grad(self, 1)) detail::grad_of(self, 1)[ch] += sum_dy_xhat;
          if (detail::wants_grad(self, 2)) detail::grad_of(self, 2)[ch] += sum_dy;
          if (!detail::wants_grad(self, 0)) continue;
          auto& dx = detail::grad_of(self, 0);
          const double k = gv[ch] * inv_std[ch];
          const double md = static_cast<double>(m);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < hw; ++j) {
              const std::size_t idx = (i * c + ch) * hw + j;
              dx[idx] += training ? k * (dy[idx] - sum_dy / md - xhat[idx] * sum_dy_xhat / md) : k * dy[idx];
            }
        }
      });
}

/// Row-wise Euclidean norms of an N×d matrix; the subgradient at a zero row is 0.
inline Tensor l2_norm_rows(const Tensor& x) {
  detail::require_rank(x, 2, "l2_norm_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    out[i] = std::sqrt(s);
  }
  return Tensor::make_result({n}, std::move(out), {x}, "l2_norm_rows", [n, d](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < n; ++i) {
      if (self.value[i] == 0.0) continue;
      const double s = self.grad[i] / self.value[i];
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += s * xv[i * d + j];
    }
  });
}

/// x / (sum|x| + eps) over the whole tensor.
inline Tensor l1_normalize(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += std::abs(v);
  const double denom = s + kNormEps;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / denom;
  return Tensor::make_result(x.shape(), std::move(out), {x}, "l1_normalize", [denom](detail::Node& self) {
    auto& g = detail::grad_of(self, 0);
    const auto& xv = self.inputs[0]->value;
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double sign = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
      g[i] += (self.grad[i] - sign * dot) / denom;
    }
  });
}

// ------------------------------------------------------------------ losses

/// Mean over rows of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), j = logits.dim(1);
  require(labels.size() == n, "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(n) + " rows");
  std::vector<double> prob(n * j);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] < j, "softmax_cross_entropy: label " + std::to_string(labels[i]) + " >= class count " +
                               std::to_string(j));
    const double* row = logits.vec().data() + i * j;
    double mx = row[0];
    for (std::size_t k = 1; k < j; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < j; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < j; ++k) prob[i * j + k] = std::exp(row[k] - mx) / z;
    total += std::log(z) + mx - row[labels[i]];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return Tensor::make_result({1}, {total * inv_n}, {logits}, "softmax_cross_entropy",
                             [n, j, inv_n, labels, prob = std::move(prob)](detail::Node& self) {
                               auto& g = detail::grad_of(self, 0);
                               const double s = self.grad[0] * inv_n;
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t k = 0; k < j; ++k)
                                   g[i * j + k] += s * (prob[i * j + k] - (k == labels[i] ? 1.0 : 0.0));
                             });
}

}  // namespace bcd
