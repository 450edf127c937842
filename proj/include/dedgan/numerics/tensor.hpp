#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dedgan/errors.hpp"

namespace dedgan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-d array. Elements live in an Eigen column vector so
/// whole-tensor arithmetic can use Eigen expressions directly.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Vector::Zero(shape_numel(shape_));
  }

  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    check_shape();
    data_ = Vector::Constant(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor: element count " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    check_shape();
    if (static_cast<Index>(values.size()) != shape_numel(shape_))
      throw DimensionError("tensor: initializer size does not match shape " + shape_str(shape_));
    data_.resize(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, Vector::Constant(1, v)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar& at(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar at(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  /// View as rows x cols (row-major) over the same storage.
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw DimensionError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void check_shape() const {
    for (std::size_t i = 0; i < shape_.size(); ++i)
      if (shape_[i] <= 0)
        throw DimensionError("tensor: axis " + std::to_string(i) + " of shape " + shape_str(shape_) +
                             " is not positive");
  }
  void check_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " over tensor " + shape_str(shape_));
  }

  Shape shape_;
  Vector data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dedgan
