#pragma once

#include <algorithm>
#include <cmath>

#include "layeragg/tensor.hpp"

namespace layeragg {

/// Central-difference gradient of a scalar function, one coordinate at a time:
/// (f(x + h e_i) - f(x - h e_i)) / 2h. x is restored before returning.
template <typename Scalar, typename Fn>
Tensor<Scalar> finite_diff_grad(Fn&& f, Tensor<Scalar>& x, Scalar h = Scalar(1e-5)) {
  Tensor<Scalar> g(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar saved = x[i];
    x[i] = saved + h;
    const Scalar plus = f(x);
    x[i] = saved - h;
    const Scalar minus = f(x);
    x[i] = saved;
    g[i] = (plus - minus) / (Scalar(2) * h);
  }
  return g;
}

/// Overload for callers holding a const input.
template <typename Scalar, typename Fn>
Tensor<Scalar> finite_diff_grad(Fn&& f, const Tensor<Scalar>& x, Scalar h = Scalar(1e-5)) {
  Tensor<Scalar> copy = x;
  return finite_diff_grad(std::forward<Fn>(f), copy, h);
}

/// |a - b| / max(1e-8, |a| + |b|)
template <typename Scalar>
Scalar relative_error(Scalar a, Scalar b) {
  return std::abs(a - b) / std::max(Scalar(1e-8), std::abs(a) + std::abs(b));
}

template <typename Scalar>
Scalar max_relative_error(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_shape(b, a.shape(), "max_relative_error");
  Scalar worst = 0;
  for (Index i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

}  // namespace layeragg
