#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mixloc {

// Dense row-major array of doubles. Rank is arbitrary but almost everything
// in this library is a scalar {1}, a vector {n} or a matrix {r, c}.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array zeros(std::vector<std::size_t> shape) { return Array(std::move(shape)); }
  static Array full(std::vector<std::size_t> shape, double value);
  static Array scalar(double value) { return Array({1}, {value}); }
  static Array identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  // Matrix accessors; a rank-1 array is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Elementwise and matrix kernels. These are the single source of truth for
// the numeric semantics; the autodiff ops wrap them.
Array add(const Array& a, const Array& b);
Array subtract(const Array& a, const Array& b);
Array multiply(const Array& a, const Array& b);
Array scale(const Array& a, double c);
Array exp(const Array& a);
Array log(const Array& a);  // throws std::domain_error on entries <= 0
Array tanh(const Array& a);
Array matmul(const Array& a, const Array& b);
Array transpose(const Array& a);
double sum(const Array& a);
double dot(const Array& a, const Array& b);

// Row softmax with temperature, stabilized by row-max subtraction.
Array softmax_rows(const Array& x, double tau);
// Per-row maximum; ties resolved to the lowest column index.
Array max_rows(const Array& x);
std::vector<std::size_t> argmax_rows(const Array& x);
// Sum of elementwise logs of the diagonal of a square matrix.
double trace_log(const Array& x);
// Rows divided by max(l2 norm, eps).
Array l2_normalize_rows(const Array& x, double eps);

Array concat_rows(std::span<const Array* const> parts);
Array slice_rows(const Array& x, std::size_t row0, std::size_t nrows);

}  // namespace mixloc
