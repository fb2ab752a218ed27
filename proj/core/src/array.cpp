#include "mixloc/array.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mixloc {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_matrix(const Array& a, const char* op) {
  if (a.rank() > 2 || a.numel() == 0) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(a.shape()));
  }
}

}  // namespace

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw std::invalid_argument("Array: shape " + shape_str(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Array Array::full(std::vector<std::size_t> shape, double value) {
  Array a(std::move(shape));
  for (double& v : a.data_) v = value;
  return a;
}

Array Array::identity(std::size_t n) {
  Array a({n, n});
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

std::size_t Array::rows() const { return rank() <= 1 ? 1 : shape_[0]; }

std::size_t Array::cols() const {
  if (rank() == 0) return 0;
  return rank() == 1 ? shape_[0] : shape_[1];
}

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return "[]";
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Array add(const Array& a, const Array& b) {
  require_same_shape(a, b, "add");
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Array subtract(const Array& a, const Array& b) {
  require_same_shape(a, b, "subtract");
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Array multiply(const Array& a, const Array& b) {
  require_same_shape(a, b, "multiply");
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Array scale(const Array& a, double c) {
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return out;
}

Array exp(const Array& a) {
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return out;
}

Array log(const Array& a) {
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] <= 0.0) {
      throw std::domain_error("log: nonpositive entry " + std::to_string(out[i]) +
                              " at flat index " + std::to_string(i));
    }
    out[i] = std::log(out[i]);
  }
  return out;
}

Array tanh(const Array& a) {
  Array out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return out;
}

Array matmul(const Array& a, const Array& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), p = a.cols(), n = b.cols();
  Array out({m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  // i-k-j order: the inner loop walks contiguous rows of b and out.
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = od + i * n;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = ad[i * p + k];
      const double* brow = bd + k * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Array transpose(const Array& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Array out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

double sum(const Array& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double dot(const Array& a, const Array& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

Array softmax_rows(const Array& x, double tau) {
  if (tau <= 0.0) {
    throw std::invalid_argument("softmax_rows: temperature must be positive, got " +
                                std::to_string(tau));
  }
  require_matrix(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw std::invalid_argument("softmax_rows: empty rows");
  Array out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x.at(i, j) / tau);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(x.at(i, j) / tau - mx);
      denom += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= denom;
  }
  return out;
}

Array max_rows(const Array& x) {
  require_matrix(x, "max_rows");
  if (x.cols() == 0) throw std::invalid_argument("max_rows: empty rows");
  const std::size_t r = x.rows();
  Array out({r});
  auto idx = argmax_rows(x);
  for (std::size_t i = 0; i < r; ++i) out[i] = x.at(i, idx[i]);
  return out;
}

std::vector<std::size_t> argmax_rows(const Array& x) {
  require_matrix(x, "argmax_rows");
  if (x.cols() == 0) throw std::invalid_argument("argmax_rows: empty rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 1; j < c; ++j) {
      if (x.at(i, j) > x.at(i, idx[i])) idx[i] = j;  // strict: ties keep lowest index
    }
  }
  return idx;
}

double trace_log(const Array& x) {
  require_matrix(x, "trace_log");
  if (x.rows() != x.cols()) {
    throw std::invalid_argument("trace_log: matrix must be square, got " + shape_str(x.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double d = x.at(i, i);
    if (d <= 0.0) {
      throw std::domain_error("trace_log: nonpositive diagonal entry " + std::to_string(d) +
                              " at index " + std::to_string(i));
    }
    s += std::log(d);
  }
  return s;
}

Array l2_normalize_rows(const Array& x, double eps) {
  if (eps <= 0.0) {
    throw std::invalid_argument("l2_normalize_rows: eps must be positive, got " +
                                std::to_string(eps));
  }
  require_matrix(x, "l2_normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  Array out = x;
  for (std::size_t i = 0; i < r; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) sq += x.at(i, j) * x.at(i, j);
    const double inv = 1.0 / std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) *= inv;
  }
  return out;
}

Array concat_rows(std::span<const Array* const> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = parts[0]->cols();
  std::size_t r = 0;
  for (const Array* p : parts) {
    require_matrix(*p, "concat_rows");
    if (p->cols() != c) {
      throw std::invalid_argument("concat_rows: column mismatch, " +
                                  shape_str(parts[0]->shape()) + " vs " + shape_str(p->shape()));
    }
    r += p->rows();
  }
  Array out({r, c});
  std::size_t row = 0;
  for (const Array* p : parts) {
    for (std::size_t i = 0; i < p->rows(); ++i, ++row)
      for (std::size_t j = 0; j < c; ++j) out.at(row, j) = p->at(i, j);
  }
  return out;
}

Array slice_rows(const Array& x, std::size_t row0, std::size_t nrows) {
  require_matrix(x, "slice_rows");
  if (row0 + nrows > x.rows()) {
    throw std::invalid_argument("slice_rows: rows [" + std::to_string(row0) + ", " +
                                std::to_string(row0 + nrows) + ") out of range for " +
                                shape_str(x.shape()));
  }
  const std::size_t c = x.cols();
  Array out({nrows, c});
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(row0 + i, j);
  return out;
}

}  // namespace mixloc
