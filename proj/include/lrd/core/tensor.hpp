#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrd/core/error.hpp"
#include "lrd/core/rng.hpp"

namespace lrd {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles. A default-constructed tensor is empty
/// (rank 0, no elements) and only serves as a placeholder.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("shape " + lrd::to_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)) + " elements, got " +
                       std::to_string(data_.size()));
    }
  }

  /// 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Matrix extents; only meaningful for rank-2 tensors.
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Exact equality of shape and every element (bitwise for non-NaN values,
  /// except that +0 and -0 compare equal).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t extent : shape_)
      if (extent == 0) throw ShapeError("zero extent in shape " + lrd::to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

enum class ElementwiseOp { add, sub, mul, div, sqrt, scale };

namespace detail {

inline double apply_binary(ElementwiseOp op, double a, double b) {
  switch (op) {
    case ElementwiseOp::add: return a + b;
    case ElementwiseOp::sub: return a - b;
    case ElementwiseOp::mul:
    case ElementwiseOp::scale: return a * b;
    case ElementwiseOp::div:
      if (b == 0.0) throw DomainError("division by zero element");
      return a / b;
    case ElementwiseOp::sqrt: break;
  }
  throw DomainError("sqrt is a unary operation");
}

inline double checked_sqrt(double a) {
  if (a < 0.0) throw DomainError("sqrt of negative element " + std::to_string(a));
  return std::sqrt(a);
}

}  // namespace detail

/// Tensor (op) tensor. Shapes must match exactly.
inline Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_binary(op, a[i], b[i]);
  return out;
}

/// Tensor (op) scalar. For sqrt the scalar is ignored.
inline Tensor elementwise(ElementwiseOp op, const Tensor& a, double b) {
  Tensor out(a.shape());
  if (op == ElementwiseOp::sqrt) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::checked_sqrt(a[i]);
    return out;
  }
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply_binary(op, a[i], b);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::div, a, b); }
inline Tensor sqrt(const Tensor& a) { return elementwise(ElementwiseOp::sqrt, a, 0.0); }
inline Tensor scale(const Tensor& a, double s) { return elementwise(ElementwiseOp::scale, a, s); }

inline Tensor gaussian_sample(Rng& rng, const Shape& shape, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw DomainError("gaussian_sample: negative std " + std::to_string(stddev));
  Tensor out(shape);
  for (double& v : out.data()) v = mean + stddev * rng.normal();
  return out;
}

/// Elements are 1.0 with probability p and 0.0 otherwise, one uniform draw
/// per element in row-major order.
inline Tensor bernoulli_mask(Rng& rng, const Shape& shape, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("bernoulli_mask: p=" + std::to_string(p) + " outside [0,1]");
  Tensor out(shape);
  for (double& v : out.data()) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return out;
}

/// C = A * B for rank-2 tensors (n x k) * (k x m).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m});
  const double* bp = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data().data() + i * m;
    const double* ai = a.data().data() + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double s = ai[kk];
      if (s == 0.0) continue;
      const double* bk = bp + kk * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += s * bk[j];
    }
  }
  return c;
}

/// C = A^T * B for rank-2 tensors (n x k)^T * (n x m) -> (k x m).
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({k, m});
  double* cp = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data().data() + i * k;
    const double* bi = b.data().data() + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double s = ai[kk];
      if (s == 0.0) continue;
      double* ck = cp + kk * m;
      for (std::size_t j = 0; j < m; ++j) ck[j] += s * bi[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 tensor required, got " + to_string(a.shape()));
  Tensor t({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

/// C = A * B^T for rank-2 tensors (n x m) * (k x m)^T -> (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  return matmul(a, transpose(b));
}

}  // namespace lrd
