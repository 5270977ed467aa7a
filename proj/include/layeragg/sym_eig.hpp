#pragma once

// Symmetric eigensolver by cyclic Jacobi rotations.
//
// Small matrices run the classic row-cyclic scalar sweep. Larger ones use the
// block-cyclic variant: the index range is cut into blocks, every block pair
// (I, J) is visited in row-cyclic order, one scalar Jacobi sweep is run on the
// (I u J) principal submatrix, and the accumulated rotation is applied to the
// full matrix with two GEMMs. Both routes stop on the same criterion, the
// off-diagonal Frobenius norm.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "layeragg/tensor.hpp"

namespace layeragg {

template <typename Scalar>
struct SymEigResult {
  Vector<Scalar> values;   // descending
  Matrix<Scalar> vectors;  // column i pairs with values[i]
  int sweeps = 0;
};

struct SymEigOptions {
  double tolerance = 1e-10;  // on the off-diagonal norm, relative to max(1, ||A||_F)
  int max_sweeps = 100;
  Index block = 24;  // block width of the block-cyclic route
};

namespace detail {

template <typename Scalar>
Scalar off_diagonal_norm(const Matrix<Scalar>& a) {
  Scalar s = 0;
  for (Index q = 0; q < a.cols(); ++q) {
    for (Index p = 0; p < q; ++p) s += a(p, q) * a(p, q);
  }
  return std::sqrt(Scalar(2) * s);
}

/// One row-cyclic sweep over every (p, q), p < q, of the symmetric matrix a.
/// Rotations are accumulated into the columns of v.
template <typename Scalar>
void jacobi_sweep(Matrix<Scalar>& a, Matrix<Scalar>& v) {
  const Index n = a.rows();
  for (Index p = 0; p + 1 < n; ++p) {
    for (Index q = p + 1; q < n; ++q) {
      const Scalar apq = a(p, q);
      if (apq == Scalar(0)) continue;
      const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
      const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                       (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
      const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
      const Scalar s = t * c;
      const Scalar app = a(p, p) - t * apq;
      const Scalar aqq = a(q, q) + t * apq;
      for (Index k = 0; k < n; ++k) {
        const Scalar x = a(k, p), y = a(k, q);
        a(k, p) = c * x - s * y;
        a(k, q) = s * x + c * y;
      }
      for (Index k = 0; k < n; ++k) {
        a(p, k) = a(k, p);
        a(q, k) = a(k, q);
      }
      a(p, p) = app;
      a(q, q) = aqq;
      a(p, q) = Scalar(0);
      a(q, p) = Scalar(0);
      for (Index k = 0; k < v.rows(); ++k) {
        const Scalar x = v(k, p), y = v(k, q);
        v(k, p) = c * x - s * y;
        v(k, q) = s * x + c * y;
      }
    }
  }
}

template <typename Scalar>
void block_jacobi_sweep(Matrix<Scalar>& a, Matrix<Scalar>& v, Index block, Scalar skip_below) {
  const Index n = a.rows();
  const Index nb = (n + block - 1) / block;
  Matrix<Scalar> sub, rot, cols, vcols;
  for (Index bi = 0; bi + 1 < nb; ++bi) {
    for (Index bj = bi + 1; bj < nb; ++bj) {
      const Index i0 = bi * block, ni = std::min(block, n - i0);
      const Index j0 = bj * block, nj = std::min(block, n - j0);
      const Index m = ni + nj;
      sub.resize(m, m);
      sub.topLeftCorner(ni, ni) = a.block(i0, i0, ni, ni);
      sub.topRightCorner(ni, nj) = a.block(i0, j0, ni, nj);
      sub.bottomLeftCorner(nj, ni) = a.block(j0, i0, nj, ni);
      sub.bottomRightCorner(nj, nj) = a.block(j0, j0, nj, nj);
      if (off_diagonal_norm(sub) <= skip_below) continue;

      rot.setIdentity(m, m);
      jacobi_sweep(sub, rot);

      cols.resize(n, m);
      cols.noalias() = a.middleCols(i0, ni) * rot.topRows(ni);
      cols.noalias() += a.middleCols(j0, nj) * rot.bottomRows(nj);
      a.middleCols(i0, ni) = cols.leftCols(ni);
      a.middleCols(j0, nj) = cols.rightCols(nj);
      a.middleRows(i0, ni) = cols.leftCols(ni).transpose();
      a.middleRows(j0, nj) = cols.rightCols(nj).transpose();
      a.block(i0, i0, ni, ni) = sub.topLeftCorner(ni, ni);
      a.block(i0, j0, ni, nj) = sub.topRightCorner(ni, nj);
      a.block(j0, i0, nj, ni) = sub.bottomLeftCorner(nj, ni);
      a.block(j0, j0, nj, nj) = sub.bottomRightCorner(nj, nj);

      vcols.resize(n, m);
      vcols.noalias() = v.middleCols(i0, ni) * rot.topRows(ni);
      vcols.noalias() += v.middleCols(j0, nj) * rot.bottomRows(nj);
      v.middleCols(i0, ni) = vcols.leftCols(ni);
      v.middleCols(j0, nj) = vcols.rightCols(nj);
    }
  }
}

}  // namespace detail

/// Eigen-decomposition of a symmetric matrix. The input is symmetrized as
/// (A + A^T) / 2 first. Eigenvalues come back in descending order, and each
/// eigenvector is signed so that its largest-magnitude entry is positive.
/// Throws ConvergenceError if the sweep budget runs out.
template <typename Derived>
SymEigResult<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& input,
                                               const SymEigOptions& options = {}) {
  using Scalar = typename Derived::Scalar;
  if (input.rows() != input.cols() || input.rows() == 0) {
    throw DimensionError("sym_eig expects a non-empty square matrix, got " +
                         std::to_string(input.rows()) + "x" + std::to_string(input.cols()));
  }
  const Index n = input.rows();
  Matrix<Scalar> a = (input + input.transpose()) / Scalar(2);
  if (!a.allFinite()) throw DimensionError("sym_eig: non-finite input");
  Matrix<Scalar> v = Matrix<Scalar>::Identity(n, n);

  const Scalar threshold = static_cast<Scalar>(options.tolerance) * std::max(Scalar(1), a.norm());
  const bool blocked = n > 2 * options.block;
  const Index nb = (n + options.block - 1) / options.block;
  // A block pair whose submatrix off-norm is below this can be skipped: if
  // every pair were skipped, the whole matrix would already meet threshold.
  const Scalar skip_below = threshold / static_cast<Scalar>(std::max<Index>(1, nb));

  int sweep = 0;
  for (;; ++sweep) {
    if (detail::off_diagonal_norm(a) <= threshold) break;
    if (sweep >= options.max_sweeps) {
      throw ConvergenceError("sym_eig: no convergence after " + std::to_string(options.max_sweeps) +
                             " sweeps");
    }
    if (blocked) {
      detail::block_jacobi_sweep(a, v, options.block, skip_below);
    } else {
      detail::jacobi_sweep(a, v);
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index i, Index j) { return a(i, i) > a(j, j); });

  SymEigResult<Scalar> result;
  result.values.resize(n);
  result.vectors.resize(n, n);
  result.sweeps = sweep;
  for (Index i = 0; i < n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    result.values[i] = a(src, src);
    Index arg = 0;
    v.col(src).cwiseAbs().maxCoeff(&arg);
    const Scalar sign = v(arg, src) < Scalar(0) ? Scalar(-1) : Scalar(1);
    result.vectors.col(i) = sign * v.col(src);
  }
  return result;
}

/// Tensor form returning (eigenvalues (D), eigenvectors (D x D) as columns).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> sym_eig(const Tensor<Scalar>& a,
                                                  const SymEigOptions& options = {}) {
  if (a.rank() != 2) throw DimensionError("sym_eig expects a rank-2 tensor");
  auto r = sym_eig(a.matrix(), options);
  Tensor<Scalar> values({a.dim(0)});
  values.values() = r.values;
  return {values, Tensor<Scalar>::from_matrix(r.vectors)};
}

}  // namespace layeragg
