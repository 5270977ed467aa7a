#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "layeragg/errors.hpp"

namespace layeragg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major N-d array. Element (i, j, k) of shape (a, b, c) lives at
/// flat index i*b*c + j*c + k. A default-constructed tensor is empty (rank 0,
/// no storage); every other tensor has extents >= 1.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.setZero(shape_size(shape_));
  }

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Vector<Scalar>(Eigen::Map<const Vector<Scalar>>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  /// Wraps a matrix as a rank-2 tensor.
  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  Vector<Scalar>& values() noexcept { return data_; }
  const Vector<Scalar>& values() const noexcept { return data_; }

  Scalar& operator[](Index flat) { return data_[flat]; }
  const Scalar& operator[](Index flat) const { return data_[flat]; }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... Idx>
  const Scalar& operator()(Idx... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank()) {
      throw DimensionError("index rank mismatch for shape " + shape_string(shape_));
    }
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[axis]) {
        throw DimensionError("index " + std::to_string(i) + " out of range on axis " +
                             std::to_string(axis) + " of " + shape_string(shape_));
      }
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  /// Row-major matrix view: all leading axes flattened into rows, the last
  /// axis as columns.
  MatrixMap<Scalar> matrix() { return MatrixMap<Scalar>(data_.data(), rows(), cols()); }
  ConstMatrixMap<Scalar> matrix() const {
    return ConstMatrixMap<Scalar>(data_.data(), rows(), cols());
  }

  /// Matrix view of the sub-tensor at leading index i (rank >= 2): the middle
  /// axes flattened into rows, the last axis as columns.
  MatrixMap<Scalar> slab(Index i) {
    const Index n = slab_rows() * cols();
    return MatrixMap<Scalar>(data_.data() + i * n, slab_rows(), cols());
  }
  ConstMatrixMap<Scalar> slab(Index i) const {
    const Index n = slab_rows() * cols();
    return ConstMatrixMap<Scalar>(data_.data() + i * n, slab_rows(), cols());
  }

  bool all_finite() const { return data_.allFinite(); }

  void set_zero() { data_.setZero(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Index cols() const { return shape_.empty() ? 0 : shape_.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }
  Index slab_rows() const {
    if (rank() < 2) throw DimensionError("slab() needs rank >= 2, got " + shape_string(shape_));
    return size() / (shape_.front() * cols());
  }

  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (Index e : shape_) {
      if (e < 1) throw DimensionError("tensor extents must be >= 1, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  Vector<Scalar> data_;
};

using Tensord = Tensor<double>;

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(what) + ": expected shape " + shape_string(expected) +
                         ", got " + shape_string(t.shape()));
  }
}

}  // namespace layeragg
