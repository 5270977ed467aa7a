#pragma once

// Differentiable dense kernels. Each forward has a matching *_backward that
// returns vector-Jacobian products; there is no autodiff graph.

#include <cmath>
#include <concepts>
#include <numbers>
#include <string>

#include "layeragg/tensor.hpp"

namespace layeragg {

// ---------------------------------------------------------------------------
// matmul

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 operands, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

// ---------------------------------------------------------------------------
// softmax

/// Row-wise softmax of a matrix expression, max-subtracted.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
template <typename DerivedY, typename DerivedG>
RowMatrix<typename DerivedY::Scalar> softmax_rows_backward(const Eigen::MatrixBase<DerivedY>& y,
                                                           const Eigen::MatrixBase<DerivedG>& grad_y) {
  using Scalar = typename DerivedY::Scalar;
  RowMatrix<Scalar> gx(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const Scalar dot = y.row(r).dot(grad_y.row(r));
    gx.row(r) = (y.row(r).array() * (grad_y.row(r).array() - dot)).matrix();
  }
  return gx;
}

namespace detail {
struct AxisLayout {
  Index outer, extent, inner;
};
template <typename Scalar>
AxisLayout axis_layout(const Tensor<Scalar>& x, Index axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) {
    throw DimensionError("axis out of range for shape " + shape_string(x.shape()));
  }
  AxisLayout l{1, x.dim(axis), 1};
  for (Index i = 0; i < axis; ++i) l.outer *= x.dim(i);
  for (Index i = axis + 1; i < x.rank(); ++i) l.inner *= x.dim(i);
  return l;
}
}  // namespace detail

/// Softmax along `axis` (negative counts from the back).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const auto l = detail::axis_layout(x, axis);
  Tensor<Scalar> y(x.shape());
  for (Index o = 0; o < l.outer; ++o) {
    for (Index i = 0; i < l.inner; ++i) {
      const Index base = o * l.extent * l.inner + i;
      Scalar m = x[base];
      for (Index j = 1; j < l.extent; ++j) m = std::max(m, x[base + j * l.inner]);
      Scalar sum = 0;
      for (Index j = 0; j < l.extent; ++j) {
        const Scalar e = std::exp(x[base + j * l.inner] - m);
        y[base + j * l.inner] = e;
        sum += e;
      }
      for (Index j = 0; j < l.extent; ++j) y[base + j * l.inner] /= sum;
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_y, Index axis) {
  require_shape(grad_y, y.shape(), "softmax_backward");
  const auto l = detail::axis_layout(y, axis);
  Tensor<Scalar> gx(y.shape());
  for (Index o = 0; o < l.outer; ++o) {
    for (Index i = 0; i < l.inner; ++i) {
      const Index base = o * l.extent * l.inner + i;
      Scalar dot = 0;
      for (Index j = 0; j < l.extent; ++j) dot += y[base + j * l.inner] * grad_y[base + j * l.inner];
      for (Index j = 0; j < l.extent; ++j) {
        const Index k = base + j * l.inner;
        gx[k] = y[k] * (grad_y[k] - dot);
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// layer norm over the last axis

template <typename Scalar>
struct LayerNormCache {
  RowMatrix<Scalar> normalized;  // (x - mean) * inv_std, per row
  Vector<Scalar> inv_std;
};

template <typename Scalar>
struct LayerNormGrads {
  RowMatrix<Scalar> input;
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
};

template <typename Derived, typename Scalar = typename Derived::Scalar>
RowMatrix<Scalar> layer_norm_rows(const Eigen::MatrixBase<Derived>& x, const Vector<Scalar>& gamma,
                                  const Vector<Scalar>& beta, Scalar eps,
                                  LayerNormCache<Scalar>* cache = nullptr) {
  const Index d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta length must equal the last extent " +
                         std::to_string(d));
  }
  RowMatrix<Scalar> xhat(x.rows(), d);
  Vector<Scalar> inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    auto centered = (x.row(r).array() - mean);
    const Scalar var = centered.square().mean();
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (centered * inv_std[r]).matrix();
  }
  RowMatrix<Scalar> y = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
                        beta.transpose().array();
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Derived, typename Scalar = typename Derived::Scalar>
LayerNormGrads<Scalar> layer_norm_rows_backward(const LayerNormCache<Scalar>& cache,
                                                const Vector<Scalar>& gamma,
                                                const Eigen::MatrixBase<Derived>& grad_y) {
  const auto& xhat = cache.normalized;
  const Index d = xhat.cols();
  LayerNormGrads<Scalar> g;
  g.gamma = (grad_y.array() * xhat.array()).colwise().sum().transpose();
  g.beta = grad_y.colwise().sum().transpose();
  g.input.resize(xhat.rows(), d);
  for (Index r = 0; r < xhat.rows(); ++r) {
    const RowVector<Scalar> gh = (grad_y.row(r).array() * gamma.transpose().array()).matrix();
    const Scalar mean_g = gh.mean();
    const Scalar mean_gx = gh.dot(xhat.row(r)) / static_cast<Scalar>(d);
    g.input.row(r) =
        (cache.inv_std[r] * (gh.array() - mean_g - xhat.row(r).array() * mean_gx)).matrix();
  }
  return g;
}

/// Tensor form: normalizes over the last axis of x.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Scalar eps = Scalar(1e-5),
                          LayerNormCache<Scalar>* cache = nullptr) {
  Tensor<Scalar> y(x.shape());
  y.matrix() = layer_norm_rows(x.matrix(), gamma.values(), beta.values(), eps, cache);
  return y;
}

// ---------------------------------------------------------------------------
// gelu, exact erf form x * Phi(x)

template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  return x * Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
                     std::numbers::sqrt2_v<Scalar>;
  return cdf + x * pdf;
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

template <typename DerivedX, typename DerivedG>
RowMatrix<typename DerivedX::Scalar> gelu_backward(const Eigen::MatrixBase<DerivedX>& x,
                                                   const Eigen::MatrixBase<DerivedG>& grad_y) {
  using Scalar = typename DerivedX::Scalar;
  return (x.unaryExpr([](Scalar v) { return gelu_derivative(v); }).array() * grad_y.array())
      .matrix();
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.values() = x.values().unaryExpr([](Scalar v) { return gelu(v); });
  return y;
}

template <typename Scalar>
Tensor<Scalar> gelu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_y) {
  require_shape(grad_y, x.shape(), "gelu_backward");
  Tensor<Scalar> g(x.shape());
  g.values() =
      (x.values().unaryExpr([](Scalar v) { return gelu_derivative(v); }).array() *
       grad_y.values().array())
          .matrix();
  return g;
}

// ---------------------------------------------------------------------------
// 1-D convolution over the layer axis

/// floor((length + 2*padding - kernel) / stride) + 1, rejecting empty output.
inline Index conv_output_length(Index length, Index kernel, Index stride, Index padding) {
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw ConfigError("conv: kernel and stride must be >= 1 and padding >= 0");
  }
  const Index span = length + 2 * padding - kernel;
  if (span < 0) {
    throw DimensionError("conv: degenerate window, length " + std::to_string(length) +
                         " + 2*padding " + std::to_string(padding) + " < kernel " +
                         std::to_string(kernel));
  }
  return span / stride + 1;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> kernels;
  Tensor<Scalar> bias;
};

/// Convolution whose spatial axis is axis 0 (the layer index) and whose
/// channels are the last axis. Axes in between are independent positions
/// (e.g. frames), so an (L, T, D) stack convolves every frame at once.
///   input   (L, ..., C_in)
///   kernels (K, C_in, C_out)
///   bias    (C_out)
///   out[p, ..., d] = bias[d] + sum_{k,c} kernels[k,c,d] * in_padded[p*stride + k, ..., c]
template <typename Scalar>
Tensor<Scalar> conv1d_layer_axis(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                 const Tensor<Scalar>& bias, Index stride, Index padding) {
  if (input.rank() < 2 || kernels.rank() != 3 || bias.rank() != 1) {
    throw DimensionError("conv1d_layer_axis: bad operand ranks");
  }
  const Index len = input.dim(0), c_in = input.dim(input.rank() - 1);
  const Index k = kernels.dim(0), c_out = kernels.dim(2);
  if (kernels.dim(1) != c_in || bias.dim(0) != c_out) {
    throw DimensionError("conv1d_layer_axis: kernel " + shape_string(kernels.shape()) +
                         " incompatible with input " + shape_string(input.shape()) + " / bias " +
                         shape_string(bias.shape()));
  }
  const Index out_len = conv_output_length(len, k, stride, padding);

  Shape out_shape = input.shape();
  out_shape.front() = out_len;
  out_shape.back() = c_out;
  Tensor<Scalar> out(out_shape);
  for (Index p = 0; p < out_len; ++p) {
    auto dst = out.slab(p);
    dst.rowwise() = bias.values().transpose();
    for (Index tap = 0; tap < k; ++tap) {
      const Index src = p * stride + tap - padding;
      if (src < 0 || src >= len) continue;
      const ConstMatrixMap<Scalar> w(kernels.data() + tap * c_in * c_out, c_in, c_out);
      dst.noalias() += input.slab(src) * w;
    }
  }
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> conv1d_layer_axis_backward(const Tensor<Scalar>& input,
                                             const Tensor<Scalar>& kernels,
                                             const Tensor<Scalar>& grad_out, Index stride,
                                             Index padding) {
  const Index len = input.dim(0), c_in = kernels.dim(1), c_out = kernels.dim(2);
  const Index k = kernels.dim(0);
  const Index out_len = conv_output_length(len, k, stride, padding);
  if (grad_out.dim(0) != out_len || grad_out.dim(grad_out.rank() - 1) != c_out) {
    throw DimensionError("conv1d_layer_axis_backward: grad_out shape " +
                         shape_string(grad_out.shape()) + " does not match forward output");
  }
  ConvGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(kernels.shape()),
                      Tensor<Scalar>({c_out})};
  for (Index p = 0; p < out_len; ++p) {
    const auto go = grad_out.slab(p);
    g.bias.values() += go.colwise().sum().transpose();
    for (Index tap = 0; tap < k; ++tap) {
      const Index src = p * stride + tap - padding;
      if (src < 0 || src >= len) continue;
      const ConstMatrixMap<Scalar> w(kernels.data() + tap * c_in * c_out, c_in, c_out);
      MatrixMap<Scalar> gw(g.kernels.data() + tap * c_in * c_out, c_in, c_out);
      gw.noalias() += input.slab(src).transpose() * go;
      g.input.slab(src).noalias() += go * w.transpose();
    }
  }
  return g;
}

}  // namespace layeragg
