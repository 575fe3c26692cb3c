#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qcomp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with rank 1 or 2.
///
/// A rank-0 tensor is not representable; scalars are stored as shape {1}.
/// Zero-sized dimensions are allowed only for empty concatenation operands.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Row count, treating a rank-1 tensor as one row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  /// Column count, treating a rank-1 tensor as one row.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// Same data viewed under another shape of equal size.
  Tensor reshaped(Shape shape) const;

  /// Scalar value of a single-element tensor.
  double item() const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Row-major integer matrix for discrete routing data (ranks, table indices).
struct IntMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> data;

  IntMatrix() = default;
  IntMatrix(std::size_t r, std::size_t c, int fill = 0) : rows(r), cols(c), data(r * c, fill) {}

  int& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  int operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const IntMatrix& a, const IntMatrix& b) = default;
};

}  // namespace qcomp
