// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mata/error.hpp"

namespace mata {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major array. Extents are positive; `size() == product(shape)`.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_extents();
    values_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (shape_size(shape_) != values_.size())
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                           std::to_string(values_.size()) + " values");
  }

  /// 2-D literal, e.g. `Tensor<double>::matrix({{1, 2}, {3, 4}})`.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<T> v;
    v.reserve(m * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(v));
  }

  static Tensor vector(std::initializer_list<T> v) { return Tensor({v.size()}, std::vector<T>(v)); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Extent of all axes but the last; the "row" count for last-axis ops.
  std::size_t leading() const { return rank() ? size() / shape_.back() : 0; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size())
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    return Tensor(std::move(s), values_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(v));
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<T> values_;
};

namespace detail {

/// C[m x n] += A[m x k] * B[k x n], all row-major and contiguous.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t m, std::size_t n) {
  std::vector<T> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

}  // namespace detail

/// Plain (non-differentiable) matrix product.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  Tensor<T> c({a.dim(0), b.dim(1)});
  detail::gemm_acc(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_string(a.shape()));
  return Tensor<T>({a.dim(1), a.dim(0)}, detail::transpose(a.data(), a.dim(0), a.dim(1)));
}

}  // namespace mata
