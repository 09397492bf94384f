#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nde/error.hpp"

namespace nde {

/// Row-major dense matrix used for all numerical work.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles.
///
/// Rank 0 and 1 tensors are viewed as a single row, rank 2 as a matrix, and
/// higher ranks fold every leading dimension into the row count.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
      throw InvalidArgument("tensor shape " + shape_string(shape_) + " does not match " +
                            std::to_string(values_.size()) + " values");
    }
  }

  static Tensor from_matrix(const Matrix& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.values_.begin());
    return t;
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  Eigen::Index rows() const {
    if (shape_.size() <= 1) return 1;
    return static_cast<Eigen::Index>(values_.size() / shape_.back());
  }
  Eigen::Index cols() const {
    if (shape_.empty()) return 1;
    return static_cast<Eigen::Index>(shape_.back());
  }

  MatrixMap matrix() { return MatrixMap(values_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values_.data(), rows(), cols()); }

  /// Slice along the leading dimension of a rank-3 tensor.
  ConstMatrixMap slice(std::size_t i) const {
    const auto r = static_cast<Eigen::Index>(shape_.at(1));
    const auto c = static_cast<Eigen::Index>(shape_.at(2));
    return ConstMatrixMap(values_.data() + i * shape_[1] * shape_[2], r, c);
  }
  MatrixMap slice(std::size_t i) {
    const auto r = static_cast<Eigen::Index>(shape_.at(1));
    const auto c = static_cast<Eigen::Index>(shape_.at(2));
    return MatrixMap(values_.data() + i * shape_[1] * shape_[2], r, c);
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

inline void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericalError("non-finite value in " + what);
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericalError("non-finite value in " + what);
}

}  // namespace nde
