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

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "duet/graph.h"
#include "duet/rng.h"
#include "duet/tensor.h"

namespace duet {

// Named parameter arrays, iterated in lexicographic name order.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>, std::less<>>;

  void add(std::string name, Tensor<T> value);
  void set(std::string_view name, Tensor<T> value);
  bool contains(std::string_view name) const { return values_.find(name) != values_.end(); }
  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get_mut(std::string_view name);
  std::vector<std::string> names(std::string_view prefix = "") const;
  std::int64_t element_count(std::string_view prefix = "") const;

  // Copy of every entry whose name starts with `prefix`.
  ParameterStore subset(std::string_view prefix) const;

  const Map& entries() const { return values_; }
  Map& entries() { return values_; }
  std::size_t size() const { return values_.size(); }

  bool operator==(const ParameterStore&) const = default;

 private:
  Map values_;
};

// Initialisers used by the model modules.
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng);

// Binds store entries into a graph on first use. Entries accepted by the
// trainable predicate become gradient leaves, the rest constants.
template <typename T>
class Binder {
 public:
  using Predicate = std::function<bool(std::string_view)>;

  Binder(Graph<T>& graph, const ParameterStore<T>& store,
         Predicate trainable = nullptr);

  NodeId operator()(std::string_view name);
  Graph<T>& graph() { return *graph_; }
  const ParameterStore<T>& store() const { return *store_; }
  bool has(std::string_view name) const { return store_->contains(name); }

  // Gradients of every bound trainable entry, keyed by name.
  std::map<std::string, Tensor<T>, std::less<>> collect(
      const std::vector<Tensor<T>>& grads) const;

 private:
  Graph<T>* graph_;
  const ParameterStore<T>* store_;
  Predicate trainable_;
  std::map<std::string, NodeId, std::less<>> bound_;
};

}  // namespace duet
