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

#include "duet/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace duet {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
    }
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

template <typename T>
Tensor<T>::Tensor() : data_(1, T{0}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(element_count(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::vector<T> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return Tensor(Shape{n}, std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const auto r = static_cast<std::int64_t>(rows.size());
  const std::int64_t c = r ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
  std::vector<T> values;
  values.reserve(static_cast<std::size_t>(r * c));
  for (const auto& row : rows) {
    if (static_cast<std::int64_t>(row.size()) != c) {
      throw ShapeError("ragged matrix literal");
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(a)];
}

template <typename T>
std::int64_t Tensor<T>::rows() const {
  if (rank() != 2) throw ShapeError("rows() on non-matrix " + shape_string(shape_));
  return shape_[0];
}

template <typename T>
std::int64_t Tensor<T>::cols() const {
  if (rank() != 2) throw ShapeError("cols() on non-matrix " + shape_string(shape_));
  return shape_[1];
}

template <typename T>
std::span<const T> Tensor<T>::row(std::int64_t r) const {
  const auto c = cols();
  return std::span<const T>(data_).subspan(static_cast<std::size_t>(r * c),
                                           static_cast<std::size_t>(c));
}

template <typename T>
std::span<T> Tensor<T>::row(std::int64_t r) {
  const auto c = cols();
  return std::span<T>(data_).subspan(static_cast<std::size_t>(r * c),
                                     static_cast<std::size_t>(c));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (element_count(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                     shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::slice_rows(std::int64_t begin, std::int64_t end) const {
  if (rank() != 2 || begin < 0 || end > shape_[0] || begin > end) {
    throw ShapeError("bad row slice [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") of " + shape_string(shape_));
  }
  const auto c = shape_[1];
  std::vector<T> out(data_.begin() + begin * c, data_.begin() + end * c);
  return Tensor(Shape{end - begin, c}, std::move(out));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<std::int64_t>;
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace duet
