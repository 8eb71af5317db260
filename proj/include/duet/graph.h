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
#include <functional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "duet/tensor.h"

namespace duet {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kGelu,
  kConv1d,
  kGatherRows,
  kMaskedSelect,
  kTakeAlongRows,
  kMean,
  kSum,
  kSumSquares,
  kConcat,
  kTranspose,
  kSlice,
  kReshape,
};

std::string_view op_name(Op op);

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tape of tensor operations supporting reverse-mode differentiation.
//
// Nodes are appended in evaluation order, so ids are already a topological
// order and backward() walks them from the loss down to 0, visiting each node
// once. A graph is used from one thread at a time; independent graphs may be
// evaluated concurrently.
//
// Binary elementwise ops (add, sub, mul) broadcast per broadcast_shapes().
// Row-wise ops (softmax, log_softmax, layer_norm) act on the last axis.
template <typename T>
class Graph {
 public:
  class BackwardContext;
  using BackwardFn = std::function<void(BackwardContext&)>;

  // With `record` false no backward closures are kept; use it for
  // inference-only passes such as the teacher forward.
  explicit Graph(bool record = true) : record_(record) {}

  NodeId constant(Tensor<T> value);
  NodeId parameter(Tensor<T> value);

  const Tensor<T>& value(NodeId id) const { return node(id).value; }
  const Shape& shape(NodeId id) const { return node(id).value.shape(); }
  Op op(NodeId id) const { return node(id).op; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  // Matrix product of rank-2 operands, optionally transposing either side.
  NodeId matmul(NodeId a, NodeId b, bool transpose_a = false,
                bool transpose_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId softmax(NodeId x);
  NodeId log_softmax(NodeId x);
  // Normalises the last axis, then applies gamma * xhat + beta. The variance
  // is floored by eps, so a constant row maps to beta.
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
  // Exact GELU, x * Phi(x).
  NodeId gelu(NodeId x);
  // Grouped 1-D convolution over time with "same" zero padding and no bias.
  // x: [L, C_in], weight: [C_out, C_in / groups, kernel] with an odd kernel.
  NodeId conv1d(NodeId x, NodeId weight, int groups);
  // Rows of a [V, d] table; repeated indices accumulate gradient.
  NodeId gather_rows(NodeId table, std::vector<std::int64_t> indices);
  // Rows of a [L, d] tensor whose mask entry is nonzero, in order.
  NodeId masked_select(NodeId x, std::span<const std::uint8_t> row_mask);
  // out[i] = x[i, columns[i]] for x of shape [n, V].
  NodeId take_along_rows(NodeId x, std::vector<std::int64_t> columns);
  NodeId mean(NodeId x);
  NodeId sum(NodeId x);
  NodeId sum_squares(NodeId x);
  NodeId concat(std::span<const NodeId> parts, int axis);
  NodeId transpose(NodeId x);
  NodeId slice(NodeId x, int axis, std::int64_t begin, std::int64_t end);
  NodeId reshape(NodeId x, Shape shape);

  // Gradient of a scalar node with respect to every node, indexed by id.
  // Nodes that cannot reach the loss receive zero tensors. The graph is not
  // modified, so repeated calls return identical results.
  std::vector<Tensor<T>> backward(NodeId loss) const;

  class BackwardContext {
   public:
    const Tensor<T>& grad() const { return *grad_; }
    const Tensor<T>& output() const { return graph_->value(self_); }
    const Tensor<T>& input(int k) const {
      return graph_->value(graph_->node(self_).inputs[static_cast<std::size_t>(k)]);
    }
    bool needs(int k) const {
      return graph_->requires_grad(
          graph_->node(self_).inputs[static_cast<std::size_t>(k)]);
    }
    // Accumulator for the gradient of input k, zero-filled on first use.
    Tensor<T>& input_grad(int k);

   private:
    friend class Graph;
    const Graph* graph_ = nullptr;
    NodeId self_ = 0;
    const Tensor<T>* grad_ = nullptr;
    std::vector<Tensor<T>>* grads_ = nullptr;
    std::vector<std::uint8_t>* touched_ = nullptr;
  };

 private:
  struct Node {
    Op op;
    Tensor<T> value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(NodeId id) const;
  NodeId push(Op op, Tensor<T> value, std::vector<NodeId> inputs,
              BackwardFn backward);
  NodeId binary(Op op, NodeId a, NodeId b);

  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace duet
