#pragma once

// Differentiable operations over Var<Scalar>. Every op validates shapes,
// computes its value eagerly and records a backward closure when any input
// participates in differentiation.

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dedgan/errors.hpp"
#include "dedgan/numerics/autodiff.hpp"
#include "dedgan/numerics/tensor.hpp"

namespace dedgan {

namespace detail {

template <typename Scalar>
void accumulate(const Var<Scalar>& target, const Tensor<Scalar>& g) {
  if (target.requires_grad()) target.mutable_grad().vec() += g.vec();
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* operand) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(s));
}

template <typename Scalar, typename F, typename G>
Var<Scalar> unary(const Var<Scalar>& x, const char* name, F forward, G derivative) {
  Tensor<Scalar> out(x.shape());
  out.vec() = x.value().vec().unaryExpr(forward);
  Tensor<Scalar> y = out;
  return make_result<Scalar>(std::move(out), {x}, name, [x, derivative, y = std::move(y)](const Tensor<Scalar>& g) mutable {
    if (!x.requires_grad()) return;
    // derivative(x, y) -> dy/dx
    auto& dx = x.mutable_grad().vec();
    const auto& xv = x.value().vec();
    for (Index i = 0; i < dx.size(); ++i) dx[i] += g[i] * derivative(xv[i], y[i]);
  });
}

/// Geometry of a strided, zero-padded 2-D cross-correlation.
struct ConvGeometry {
  Index batch, channels, height, width;
  Index kernel_h, kernel_w, stride, pad;
  Index out_h, out_w;

  Index col_rows() const { return channels * kernel_h * kernel_w; }
  Index col_cols() const { return batch * out_h * out_w; }
};

inline Index conv_out_extent(Index in, Index k, Index stride, Index pad, const char* op, const char* axis) {
  const Index span = in + 2 * pad - k;
  if (span < 0)
    throw DimensionError(std::string(op) + ": kernel " + axis + " " + std::to_string(k) +
                         " exceeds padded input " + axis + " " + std::to_string(in + 2 * pad));
  if (span % stride != 0)
    throw DimensionError(std::string(op) + ": " + axis + " " + std::to_string(in) + " with kernel " +
                         std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " +
                         std::to_string(pad) + " does not tile exactly");
  return span / stride + 1;
}

/// col is [C*kh*kw, N*out_h*out_w], row-major.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  const Index plane = g.out_h * g.out_w;
  const Index cols = g.col_cols();
  for (Index c = 0; c < g.channels; ++c)
    for (Index ki = 0; ki < g.kernel_h; ++ki)
      for (Index kj = 0; kj < g.kernel_w; ++kj) {
        Scalar* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        for (Index n = 0; n < g.batch; ++n) {
          const Scalar* xc = x + (n * g.channels + c) * g.height * g.width;
          Scalar* dst = row + n * plane;
          for (Index oh = 0; oh < g.out_h; ++oh) {
            const Index ih = oh * g.stride - g.pad + ki;
            Scalar* drow = dst + oh * g.out_w;
            if (ih < 0 || ih >= g.height) {
              for (Index ow = 0; ow < g.out_w; ++ow) drow[ow] = Scalar(0);
              continue;
            }
            const Scalar* xrow = xc + ih * g.width;
            for (Index ow = 0; ow < g.out_w; ++ow) {
              const Index iw = ow * g.stride - g.pad + kj;
              drow[ow] = (iw >= 0 && iw < g.width) ? xrow[iw] : Scalar(0);
            }
          }
        }
      }
}

/// Adjoint of im2col: scatters col back onto x (accumulating).
template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* x) {
  const Index plane = g.out_h * g.out_w;
  const Index cols = g.col_cols();
  for (Index c = 0; c < g.channels; ++c)
    for (Index ki = 0; ki < g.kernel_h; ++ki)
      for (Index kj = 0; kj < g.kernel_w; ++kj) {
        const Scalar* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        for (Index n = 0; n < g.batch; ++n) {
          Scalar* xc = x + (n * g.channels + c) * g.height * g.width;
          const Scalar* src = row + n * plane;
          for (Index oh = 0; oh < g.out_h; ++oh) {
            const Index ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.height) continue;
            Scalar* xrow = xc + ih * g.width;
            const Scalar* srow = src + oh * g.out_w;
            for (Index ow = 0; ow < g.out_w; ++ow) {
              const Index iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.width) xrow[iw] += srow[ow];
            }
          }
        }
      }
}

/// [N, C, P] <-> [C, N*P] permutations used around the batched GEMM.
template <typename Scalar>
void nchw_to_cn(const Scalar* src, Index n, Index c, Index plane, Scalar* dst) {
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j)
      std::copy_n(src + (i * c + j) * plane, plane, dst + j * n * plane + i * plane);
}

template <typename Scalar>
void cn_to_nchw(const Scalar* src, Index n, Index c, Index plane, Scalar* dst) {
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j)
      std::copy_n(src + j * n * plane + i * plane, plane, dst + (i * c + j) * plane);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return make_result<Scalar>(std::move(out), {a, b}, "add", [a, b](const Tensor<Scalar>& g) mutable {
    detail::accumulate(a, g);
    detail::accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() - b.value().vec();
  return make_result<Scalar>(std::move(out), {a, b}, "sub", [a, b](const Tensor<Scalar>& g) mutable {
    detail::accumulate(a, g);
    if (b.requires_grad()) b.mutable_grad().vec() -= g.vec();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return make_result<Scalar>(std::move(out), {a, b}, "mul", [a, b](const Tensor<Scalar>& g) mutable {
    if (a.requires_grad()) a.mutable_grad().vec() += g.vec().cwiseProduct(b.value().vec());
    if (b.requires_grad()) b.mutable_grad().vec() += g.vec().cwiseProduct(a.value().vec());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec() * s;
  return make_result<Scalar>(std::move(out), {a}, "scale", [a, s](const Tensor<Scalar>& g) mutable {
    if (a.requires_grad()) a.mutable_grad().vec() += g.vec() * s;
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape());
  out.vec() = a.value().vec().array() + s;
  return make_result<Scalar>(std::move(out), {a}, "add_scalar",
                             [a](const Tensor<Scalar>& g) mutable { detail::accumulate(a, g); });
}

/// Sum of scalar Vars weighted by constants; the weighted-total building block.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<std::pair<Scalar, Var<Scalar>>>& terms) {
  if (terms.empty()) throw DimensionError("weighted_sum: no terms");
  Tensor<Scalar> out(terms.front().second.shape());
  std::vector<Var<Scalar>> parents;
  for (const auto& [w, v] : terms) {
    detail::require_same_shape(v, terms.front().second, "weighted_sum");
    out.vec() += w * v.value().vec();
    parents.push_back(v);
  }
  return make_result<Scalar>(std::move(out), parents, "weighted_sum", [terms](const Tensor<Scalar>& g) mutable {
    for (auto& [w, v] : terms)
      if (v.requires_grad()) v.mutable_grad().vec() += w * g.vec();
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().vec().sum());
  return make_result<Scalar>(std::move(out), {a}, "sum", [a](const Tensor<Scalar>& g) mutable {
    if (a.requires_grad()) a.mutable_grad().vec().array() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.size());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().vec().sum() * inv);
  return make_result<Scalar>(std::move(out), {a}, "mean", [a, inv](const Tensor<Scalar>& g) mutable {
    if (a.requires_grad()) a.mutable_grad().vec().array() += g[0] * inv;
  });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& x) {
  return detail::unary(
      x, "abs", [](Scalar v) { return std::abs(v); },
      [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0)); });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
  return detail::unary(
      x, "square", [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return Scalar(2) * v; });
}

/// log(x + eps); the guard keeps saturated probabilities finite.
template <typename Scalar>
Var<Scalar> log_eps(const Var<Scalar>& x, Scalar eps) {
  return detail::unary(
      x, "log", [eps](Scalar v) { return std::log(v + eps); },
      [eps](Scalar v, Scalar) { return Scalar(1) / (v + eps); });
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Var<Scalar> elu(const Var<Scalar>& x) {
  return detail::unary(
      x, "elu", [](Scalar v) { return v > 0 ? v : std::expm1(v); },
      [](Scalar v, Scalar y) { return v > 0 ? Scalar(1) : y + Scalar(1); });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  return detail::unary(
      x, "tanh", [](Scalar v) { return std::tanh(v); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  return detail::unary(
      x, "sigmoid",
      [](Scalar v) {
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

/// Row-wise softmax over a [N, K] matrix.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  detail::require_rank(x.shape(), 2, "softmax", "input");
  const Index n = x.dim(0), k = x.dim(1);
  Tensor<Scalar> out(x.shape());
  auto in = x.value().matrix(n, k);
  auto o = out.matrix(n, k);
  for (Index i = 0; i < n; ++i) {
    o.row(i) = (in.row(i).array() - in.row(i).maxCoeff()).exp().matrix();
    o.row(i) /= o.row(i).sum();
  }
  Tensor<Scalar> y = out;
  return make_result<Scalar>(std::move(out), {x}, "softmax", [x, y = std::move(y), n, k](const Tensor<Scalar>& g) mutable {
    if (!x.requires_grad()) return;
    auto gm = g.matrix(n, k);
    auto ym = y.matrix(n, k);
    auto dx = x.mutable_grad().matrix(n, k);
    for (Index i = 0; i < n; ++i) {
      const Scalar dot = gm.row(i).dot(ym.row(i));
      dx.row(i).array() += ym.row(i).array() * (gm.row(i).array() - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return make_result<Scalar>(std::move(out), {x}, "reshape", [x](const Tensor<Scalar>& g) mutable {
    if (x.requires_grad()) x.mutable_grad().vec() += g.vec();
  });
}

/// Concatenate [N, k_i] matrices along the column axis.
template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Index n = parts.front().dim(0);
  Index total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    detail::require_rank(parts[i].shape(), 2, "concat", "input");
    if (parts[i].dim(0) != n)
      throw DimensionError("concat: input " + std::to_string(i) + " has " + std::to_string(parts[i].dim(0)) +
                           " rows on axis 0, expected " + std::to_string(n));
    total += parts[i].dim(1);
  }
  Tensor<Scalar> out(Shape{n, total});
  auto o = out.matrix(n, total);
  Index offset = 0;
  for (const auto& p : parts) {
    o.middleCols(offset, p.dim(1)) = p.value().matrix(n, p.dim(1));
    offset += p.dim(1);
  }
  return make_result<Scalar>(std::move(out), parts, "concat", [parts, n, total](const Tensor<Scalar>& g) mutable {
    auto gm = g.matrix(n, total);
    Index off = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) p.mutable_grad().matrix(n, p.dim(1)) += gm.middleCols(off, p.dim(1));
      off += p.dim(1);
    }
  });
}

/// out[i] = x[i, labels[i]] for a [N, K] matrix.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, const std::vector<int>& labels) {
  detail::require_rank(x.shape(), 2, "gather", "input");
  const Index n = x.dim(0), k = x.dim(1);
  if (static_cast<Index>(labels.size()) != n)
    throw DimensionError("gather: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  Tensor<Scalar> out(Shape{n});
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k)
      throw RangeError("gather: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    out[i] = x.value().at(i, y);
  }
  return make_result<Scalar>(std::move(out), {x}, "gather", [x, labels, n](const Tensor<Scalar>& g) mutable {
    if (!x.requires_grad()) return;
    auto& dx = x.mutable_grad();
    for (Index i = 0; i < n; ++i) dx.at(i, labels[static_cast<std::size_t>(i)]) += g[i];
  });
}

// ---------------------------------------------------------------------------
// Dense and convolutional layers

/// y = x W^T + b with x [N, in], W [out, in], b [out].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  detail::require_rank(x.shape(), 2, "linear", "input");
  detail::require_rank(w.shape(), 2, "linear", "weight");
  const Index n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in)
    throw DimensionError("linear: input axis 1 has " + std::to_string(in) + " features, weight expects " +
                         std::to_string(w.dim(1)));
  if (b.shape() != Shape{out_dim}) throw DimensionError("linear: bias shape " + shape_str(b.shape()));
  Tensor<Scalar> out(Shape{n, out_dim});
  out.matrix(n, out_dim).noalias() = x.value().matrix(n, in) * w.value().matrix(out_dim, in).transpose();
  out.matrix(n, out_dim).rowwise() += b.value().vec().transpose();
  return make_result<Scalar>(std::move(out), {x, w, b}, "linear",
                             [x, w, b, n, in, out_dim](const Tensor<Scalar>& g) mutable {
                               auto gm = g.matrix(n, out_dim);
                               if (x.requires_grad())
                                 x.mutable_grad().matrix(n, in).noalias() += gm * w.value().matrix(out_dim, in);
                               if (w.requires_grad())
                                 w.mutable_grad().matrix(out_dim, in).noalias() +=
                                     gm.transpose() * x.value().matrix(n, in);
                               if (b.requires_grad()) b.mutable_grad().vec() += gm.colwise().sum().transpose();
                             });
}

/// Zero-padded strided cross-correlation. input [N,C,H,W], kernel [F,C,kh,kw].
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, Index stride, Index padding) {
  detail::require_rank(input.shape(), 4, "conv2d", "input");
  detail::require_rank(kernel.shape(), 4, "conv2d", "kernel");
  if (stride < 1) throw DimensionError("conv2d: stride must be positive");
  if (padding < 0) throw DimensionError("conv2d: padding must be non-negative");
  if (kernel.dim(1) != input.dim(1))
    throw DimensionError("conv2d: channel axis mismatch, input has " + std::to_string(input.dim(1)) +
                         ", kernel expects " + std::to_string(kernel.dim(1)));
  detail::ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3),
                           stride, padding, 0, 0};
  geo.out_h = detail::conv_out_extent(geo.height, geo.kernel_h, stride, padding, "conv2d", "height");
  geo.out_w = detail::conv_out_extent(geo.width, geo.kernel_w, stride, padding, "conv2d", "width");
  const Index f = kernel.dim(0);
  const Index plane = geo.out_h * geo.out_w;

  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  RowMatrix col(geo.col_rows(), geo.col_cols());
  detail::im2col(input.value().data(), geo, col.data());
  RowMatrix result = kernel.value().matrix(f, geo.col_rows()) * col;

  Tensor<Scalar> out(Shape{geo.batch, f, geo.out_h, geo.out_w});
  detail::cn_to_nchw(result.data(), geo.batch, f, plane, out.data());

  return make_result<Scalar>(
      std::move(out), {input, kernel}, "conv2d",
      [input, kernel, geo, f, plane, col = std::move(col)](const Tensor<Scalar>& g) mutable {
        RowMatrix gcn(f, geo.col_cols());
        detail::nchw_to_cn(g.data(), geo.batch, f, plane, gcn.data());
        if (kernel.requires_grad())
          kernel.mutable_grad().matrix(f, geo.col_rows()).noalias() += gcn * col.transpose();
        if (input.requires_grad()) {
          RowMatrix dcol = kernel.value().matrix(f, geo.col_rows()).transpose() * gcn;
          detail::col2im(dcol.data(), geo, input.mutable_grad().data());
        }
      });
}

/// Adjoint of conv2d with the same kernel tensor: input [N,F,H,W],
/// kernel [F,C,kh,kw], output [N,C,(H-1)*stride-2*padding+kh, ...].
template <typename Scalar>
Var<Scalar> conv2d_transpose(const Var<Scalar>& input, const Var<Scalar>& kernel, Index stride, Index padding) {
  detail::require_rank(input.shape(), 4, "conv2d_transpose", "input");
  detail::require_rank(kernel.shape(), 4, "conv2d_transpose", "kernel");
  if (stride < 1) throw DimensionError("conv2d_transpose: stride must be positive");
  if (padding < 0) throw DimensionError("conv2d_transpose: padding must be non-negative");
  if (kernel.dim(0) != input.dim(1))
    throw DimensionError("conv2d_transpose: channel axis mismatch, input has " + std::to_string(input.dim(1)) +
                         ", kernel expects " + std::to_string(kernel.dim(0)));
  const Index f = kernel.dim(0);
  const Index out_h = (input.dim(2) - 1) * stride - 2 * padding + kernel.dim(2);
  const Index out_w = (input.dim(3) - 1) * stride - 2 * padding + kernel.dim(3);
  if (out_h <= 0) throw DimensionError("conv2d_transpose: output height would be non-positive");
  if (out_w <= 0) throw DimensionError("conv2d_transpose: output width would be non-positive");
  // Geometry of the forward conv this op is the adjoint of.
  detail::ConvGeometry geo{input.dim(0), kernel.dim(1), out_h, out_w, kernel.dim(2), kernel.dim(3),
                           stride, padding, input.dim(2), input.dim(3)};
  const Index plane = geo.out_h * geo.out_w;

  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  RowMatrix xcn(f, geo.col_cols());
  detail::nchw_to_cn(input.value().data(), geo.batch, f, plane, xcn.data());
  RowMatrix col = kernel.value().matrix(f, geo.col_rows()).transpose() * xcn;
  Tensor<Scalar> out(Shape{geo.batch, geo.channels, out_h, out_w});
  detail::col2im(col.data(), geo, out.data());

  return make_result<Scalar>(
      std::move(out), {input, kernel}, "conv2d_transpose",
      [input, kernel, geo, f, plane, xcn = std::move(xcn)](const Tensor<Scalar>& g) mutable {
        RowMatrix gcol(geo.col_rows(), geo.col_cols());
        detail::im2col(g.data(), geo, gcol.data());
        if (kernel.requires_grad())
          kernel.mutable_grad().matrix(f, geo.col_rows()).noalias() += xcn * gcol.transpose();
        if (input.requires_grad()) {
          RowMatrix dx = kernel.value().matrix(f, geo.col_rows()) * gcol;
          Tensor<Scalar> tmp(input.shape());
          detail::cn_to_nchw(dx.data(), geo.batch, f, plane, tmp.data());
          input.mutable_grad().vec() += tmp.vec();
        }
      });
}

/// Adds a per-channel bias to [N,C,H,W].
template <typename Scalar>
Var<Scalar> add_channel_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  detail::require_rank(x.shape(), 4, "channel_bias", "input");
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (bias.shape() != Shape{c}) throw DimensionError("channel_bias: bias shape " + shape_str(bias.shape()));
  Tensor<Scalar> out = x.value();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j) out.vec().segment((i * c + j) * plane, plane).array() += bias.value()[j];
  return make_result<Scalar>(std::move(out), {x, bias}, "channel_bias",
                             [x, bias, n, c, plane](const Tensor<Scalar>& g) mutable {
                               detail::accumulate(x, g);
                               if (!bias.requires_grad()) return;
                               auto& db = bias.mutable_grad();
                               for (Index i = 0; i < n; ++i)
                                 for (Index j = 0; j < c; ++j) db[j] += g.vec().segment((i * c + j) * plane, plane).sum();
                             });
}

/// Non-overlapping window x window average pooling on [N,C,H,W].
template <typename Scalar>
Var<Scalar> avg_pool(const Var<Scalar>& x, Index window) {
  detail::require_rank(x.shape(), 4, "avg_pool", "input");
  if (window < 1) throw DimensionError("avg_pool: window must be positive");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % window != 0) throw DimensionError("avg_pool: height " + std::to_string(h) + " not divisible by window " + std::to_string(window));
  if (w % window != 0) throw DimensionError("avg_pool: width " + std::to_string(w) + " not divisible by window " + std::to_string(window));
  const Index oh = h / window, ow = w / window;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(window * window);
  Tensor<Scalar> out(Shape{n, c, oh, ow});
  const auto& in = x.value();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j)
      for (Index a = 0; a < oh; ++a)
        for (Index b = 0; b < ow; ++b) {
          Scalar acc = 0;
          for (Index u = 0; u < window; ++u)
            for (Index v = 0; v < window; ++v) acc += in.at(i, j, a * window + u, b * window + v);
          out.at(i, j, a, b) = acc * inv;
        }
  return make_result<Scalar>(std::move(out), {x}, "avg_pool", [x, window, inv](const Tensor<Scalar>& g) mutable {
    if (!x.requires_grad()) return;
    auto& dx = x.mutable_grad();
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < c; ++j)
        for (Index a = 0; a < h; ++a)
          for (Index b = 0; b < w; ++b) dx.at(i, j, a, b) += g.at(i, j, a / window, b / window) * inv;
  });
}

/// Averages the full spatial extent: [N,C,H,W] -> [N,C]. Requires H == W.
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool", "input");
  if (x.dim(2) != x.dim(3)) throw DimensionError("global_avg_pool: spatial axes differ");
  return reshape(avg_pool(x, x.dim(2)), Shape{x.dim(0), x.dim(1)});
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class NormMode { Train, Eval };

/// Running statistics of one batch-norm layer.
template <typename Scalar>
struct BatchNormStats {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);

  explicit BatchNormStats(Index channels = 1)
      : running_mean(Shape{channels}, Scalar(0)), running_var(Shape{channels}, Scalar(1)) {}
};

/// Per-channel normalization over all axes but 1, for [N,C] or [N,C,H,W].
/// Train mode uses batch statistics and, when update_running is set, folds
/// them into the running estimates (unbiased variance). Eval mode uses the
/// frozen running statistics.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormStats<Scalar>& stats, NormMode mode, bool update_running = true) {
  if (x.shape().size() != 2 && x.shape().size() != 4)
    throw DimensionError("batch_norm: input must have rank 2 or 4, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1);
  const Index plane = x.shape().size() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("batch_norm: affine parameters must have shape [" + std::to_string(c) + "]");
  if (stats.running_mean.shape() != Shape{c}) throw DimensionError("batch_norm: running statistics shape mismatch");
  if (mode == NormMode::Train && n < 2)
    throw ConfigError("batch_norm: train mode requires batch >= 2, got " + std::to_string(n));

  const Index m = n * plane;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mu(c), invstd(c);
  const auto& in = x.value().vec();
  if (mode == NormMode::Train) {
    for (Index j = 0; j < c; ++j) {
      Scalar s = 0;
      for (Index i = 0; i < n; ++i) s += in.segment((i * c + j) * plane, plane).sum();
      mu[j] = s / static_cast<Scalar>(m);
      Scalar ss = 0;
      for (Index i = 0; i < n; ++i) ss += (in.segment((i * c + j) * plane, plane).array() - mu[j]).square().sum();
      const Scalar var = ss / static_cast<Scalar>(m);
      invstd[j] = Scalar(1) / std::sqrt(var + stats.eps);
      if (update_running) {
        const Scalar unbiased = ss / static_cast<Scalar>(m - 1);
        stats.running_mean[j] = (Scalar(1) - stats.momentum) * stats.running_mean[j] + stats.momentum * mu[j];
        stats.running_var[j] = (Scalar(1) - stats.momentum) * stats.running_var[j] + stats.momentum * unbiased;
      }
    }
  } else {
    mu = stats.running_mean.vec();
    invstd = (stats.running_var.vec().array() + stats.eps).rsqrt().matrix();
  }

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j) {
      const Index off = (i * c + j) * plane;
      xhat.vec().segment(off, plane) = (in.segment(off, plane).array() - mu[j]) * invstd[j];
      out.vec().segment(off, plane) = xhat.vec().segment(off, plane).array() * gamma.value()[j] + beta.value()[j];
    }

  return make_result<Scalar>(
      std::move(out), {x, gamma, beta}, "batch_norm",
      [x, gamma, beta, xhat = std::move(xhat), invstd, n, c, plane, m, mode](const Tensor<Scalar>& g) mutable {
        for (Index j = 0; j < c; ++j) {
          Scalar sum_g = 0, sum_gx = 0;
          for (Index i = 0; i < n; ++i) {
            const Index off = (i * c + j) * plane;
            sum_g += g.vec().segment(off, plane).sum();
            sum_gx += g.vec().segment(off, plane).dot(xhat.vec().segment(off, plane));
          }
          if (gamma.requires_grad()) gamma.mutable_grad()[j] += sum_gx;
          if (beta.requires_grad()) beta.mutable_grad()[j] += sum_g;
          if (!x.requires_grad()) continue;
          auto& dx = x.mutable_grad().vec();
          const Scalar k = gamma.value()[j] * invstd[j];
          for (Index i = 0; i < n; ++i) {
            const Index off = (i * c + j) * plane;
            if (mode == NormMode::Train) {
              dx.segment(off, plane).array() +=
                  k * (g.vec().segment(off, plane).array() - sum_g / static_cast<Scalar>(m) -
                       xhat.vec().segment(off, plane).array() * (sum_gx / static_cast<Scalar>(m)));
            } else {
              dx.segment(off, plane).array() += k * g.vec().segment(off, plane).array();
            }
          }
        }
      });
}

}  // namespace dedgan
