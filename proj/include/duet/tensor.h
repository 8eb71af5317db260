// Copyright 2026 The duet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace duet {

using Shape = std::vector<std::int64_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);
std::int64_t element_count(const Shape& shape);

// Broadcasting follows the numpy convention: shapes are aligned on their
// trailing axes, missing leading axes count as extent 1, and each aligned
// pair of extents must either match or contain a 1. Every other combination
// throws ShapeError naming both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Dense row-major array. The shape is fixed at construction; reshaping
// produces a new tensor.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  // Rank-0 tensor holding zero.
  Tensor();
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value);
  static Tensor vector(std::vector<T> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  // Negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t size() const noexcept {
    return static_cast<std::int64_t>(data_.size());
  }
  std::int64_t rows() const;
  std::int64_t cols() const;

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<const T> row(std::int64_t r) const;
  std::span<T> row(std::int64_t r);

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }
  T& operator()(std::int64_t r, std::int64_t c) {
    return data_[static_cast<std::size_t>(r * shape_.back() + c)];
  }
  const T& operator()(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_.back() + c)];
  }

  // Value of a single-element tensor of any rank.
  T item() const;
  Tensor reshaped(Shape shape) const;
  // Copy of rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::int64_t begin, std::int64_t end) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Largest absolute elementwise difference; shapes must match.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace duet
