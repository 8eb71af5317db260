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

#include "duet/params.h"

#include <stdexcept>

namespace duet {

template <typename T>
void ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  values_.emplace(std::move(name), std::move(value));
}

template <typename T>
void ParameterStore<T>::set(std::string_view name, Tensor<T> value) {
  auto it = values_.find(name);
  if (it == values_.end()) {
    values_.emplace(std::string(name), std::move(value));
  } else {
    it->second = std::move(value);
  }
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("missing parameter " + std::string(name));
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get_mut(std::string_view name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("missing parameter " + std::string(name));
  return it->second;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : values_) {
    if (name.starts_with(prefix)) out.push_back(name);
  }
  return out;
}

template <typename T>
std::int64_t ParameterStore<T>::element_count(std::string_view prefix) const {
  std::int64_t n = 0;
  for (const auto& [name, value] : values_) {
    if (name.starts_with(prefix)) n += value.size();
  }
  return n;
}

template <typename T>
ParameterStore<T> ParameterStore<T>::subset(std::string_view prefix) const {
  ParameterStore out;
  for (const auto& [name, value] : values_) {
    if (name.starts_with(prefix)) out.values_.emplace(name, value);
  }
  return out;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
Binder<T>::Binder(Graph<T>& graph, const ParameterStore<T>& store, Predicate trainable)
    : graph_(&graph), store_(&store), trainable_(std::move(trainable)) {}

template <typename T>
NodeId Binder<T>::operator()(std::string_view name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor<T>& value = store_->get(name);
  const bool train = !trainable_ || trainable_(name);
  const NodeId id = train ? graph_->parameter(value) : graph_->constant(value);
  bound_.emplace(std::string(name), id);
  return id;
}

template <typename T>
std::map<std::string, Tensor<T>, std::less<>> Binder<T>::collect(
    const std::vector<Tensor<T>>& grads) const {
  std::map<std::string, Tensor<T>, std::less<>> out;
  for (const auto& [name, id] : bound_) {
    if (graph_->op(id) == Op::kParameter) out.emplace(name, grads[static_cast<std::size_t>(id)]);
  }
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Binder<float>;
template class Binder<double>;
template Tensor<float> normal_tensor(Shape, double, Rng&);
template Tensor<double> normal_tensor(Shape, double, Rng&);

}  // namespace duet
