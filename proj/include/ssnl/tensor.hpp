#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "ssnl/common.hpp"

namespace ssnl {

// Dense row-major tensor of doubles. Rank 0 (scalar), 1 or 2 is all the
// flow layers need; zero-width matrices (n x 0) are legal and show up as
// empty conditioning blocks.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape product " +
                       std::to_string(numel_of(shape_)));
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double value() const {
    if (!is_scalar()) throw ShapeError("tensor: value() on non-scalar");
    return data_[0];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx) {
  if (src.rank() != 2) throw ShapeError("gather_rows: want rank-2 source");
  Tensor out({idx.size(), src.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= src.rows()) throw ShapeError("gather_rows: index out of range");
    for (std::size_t j = 0; j < src.cols(); ++j) out.at(i, j) = src.at(idx[i], j);
  }
  return out;
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

// C = A * B for row-major matrices; i-k-j loop order so the inner loop
// runs over contiguous memory.
inline Tensor matmul_raw(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a) + " " + shape_str(b));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m}, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = pa + i * k;
    double* ci = pc + i * m;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ai[l];
      if (av == 0.0) continue;
      const double* bl = pb + l * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
    }
  }
  return c;
}

// C = A * B^T
inline Tensor matmul_nt_raw(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a) + " " + shape_str(b));
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c({n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data().data() + i * k;
    double* ci = c.data().data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data().data() + j * k;
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
      ci[j] = acc;
    }
  }
  return c;
}

// C = A^T * B
inline Tensor matmul_tn_raw(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw ShapeError("matmul_tn: incompatible shapes " + shape_str(a) + " " + shape_str(b));
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  Tensor c({n, m}, 0.0);
  for (std::size_t l = 0; l < k; ++l) {
    const double* al = a.data().data() + l * n;
    const double* bl = b.data().data() + l * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = al[i];
      if (av == 0.0) continue;
      double* ci = c.data().data() + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
    }
  }
  return c;
}

}  // namespace ssnl
