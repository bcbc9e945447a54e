#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "dexfit/common.hpp"

namespace dexfit {

/// Dense row-major real tensor, rank 0 (scalar) through 2.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != static_cast<std::size_t>(numel_of(shape)))
      throw ShapeMismatchError("tensor data does not match shape " +
                               shape_str(shape));
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (std::int64_t d : s) {
      if (d < 0) throw ShapeMismatchError("negative dimension");
      n *= d;
    }
    return n;
  }

  static std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<std::int64_t> s) {
    std::vector<double> d(static_cast<std::size_t>(numel_of(s)), 0.0);
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor full(std::vector<std::int64_t> s, double v) {
    std::vector<double> d(static_cast<std::size_t>(numel_of(s)), v);
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor vector(std::vector<double> d) {
    const std::int64_t n = static_cast<std::int64_t>(d.size());
    return Tensor({n}, std::move(d));
  }
  static Tensor matrix(std::int64_t r, std::int64_t c, std::vector<double> d) {
    return Tensor({r, c}, std::move(d));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }
  std::int64_t rows() const { return rank() >= 1 ? shape[0] : 1; }
  std::int64_t cols() const { return rank() == 2 ? shape[1] : 1; }

  double scalar_value() const {
    if (!is_scalar())
      throw NotScalarError("tensor of shape " + shape_str(shape) +
                           " used as a scalar");
    return data[0];
  }

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatchError(std::string(op) + ": " +
                             Tensor::shape_str(a.shape) + " vs " +
                             Tensor::shape_str(b.shape));
}

}  // namespace dexfit
