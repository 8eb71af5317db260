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

#include "duet/graph.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace duet {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kGelu: return "gelu";
    case Op::kConv1d: return "conv1d";
    case Op::kGatherRows: return "gather_rows";
    case Op::kMaskedSelect: return "masked_select";
    case Op::kTakeAlongRows: return "take_along_rows";
    case Op::kMean: return "mean";
    case Op::kSum: return "sum";
    case Op::kSumSquares: return "sum_squares";
    case Op::kConcat: return "concat";
    case Op::kTranspose: return "transpose";
    case Op::kSlice: return "slice";
    case Op::kReshape: return "reshape";
  }
  return "unknown";
}

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMajor<T>>;

template <typename T>
ConstMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMap<T>(t.data(), t.dim(0), t.dim(1));
}

template <typename T>
MutMap<T> as_matrix(Tensor<T>& t) {
  return MutMap<T>(t.data(), t.dim(0), t.dim(1));
}

// out += op(x) * op(y)
template <typename T>
void gemm_acc(MutMap<T> out, const ConstMap<T>& x, bool tx, const ConstMap<T>& y,
              bool ty) {
  if (!tx && !ty) {
    out.noalias() += x * y;
  } else if (tx && !ty) {
    out.noalias() += x.transpose() * y;
  } else if (!tx && ty) {
    out.noalias() += x * y.transpose();
  } else {
    out.noalias() += x.transpose() * y.transpose();
  }
}

[[noreturn]] void fail(Op op, const std::string& what) {
  throw GraphError(std::string(op_name(op)) + ": " + what);
}

// Walks every element of a broadcast result together with the matching flat
// offsets into both operands.
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  std::int64_t size_a = 0;
  std::int64_t size_b = 0;
  bool same = false;
  bool suffix_a = false;  // a repeats over leading axes of out
  bool suffix_b = false;

  template <typename F>
  void for_each(F&& f) const {
    const std::int64_t n = element_count(out);
    if (same) {
      for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
      return;
    }
    if (suffix_b && size_a == n) {
      for (std::int64_t i = 0; i < n; ++i) f(i, i, i % size_b);
      return;
    }
    if (suffix_a && size_b == n) {
      for (std::int64_t i = 0; i < n; ++i) f(i, i % size_a, i);
      return;
    }
    const std::size_t r = out.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0;
    std::int64_t ib = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (std::size_t k = r; k-- > 0;) {
        ++idx[k];
        ia += stride_a[k];
        ib += stride_b[k];
        if (idx[k] < out[k]) break;
        ia -= stride_a[k] * out[k];
        ib -= stride_b[k] * out[k];
        idx[k] = 0;
      }
    }
  }
};

std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t stride = 1;
  for (std::size_t k = r; k-- > 0;) {
    const std::size_t offset = r - in.size();
    if (k < offset) break;
    const std::int64_t e = in[k - offset];
    strides[k] = e == 1 ? 0 : stride;
    stride *= e;
  }
  return strides;
}

// True when `in`, with leading unit axes removed, equals the trailing axes of
// `out`; elementwise offsets then cycle with period element_count(in).
bool is_suffix(const Shape& in, const Shape& out) {
  std::size_t lead = 0;
  while (lead < in.size() && in[lead] == 1) ++lead;
  const std::size_t len = in.size() - lead;
  if (len > out.size()) return false;
  return std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                    out.end() - static_cast<std::ptrdiff_t>(len));
}

BroadcastPlan make_plan(Op op, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  try {
    plan.out = broadcast_shapes(a, b);
  } catch (const ShapeError& e) {
    fail(op, e.what());
  }
  plan.stride_a = aligned_strides(a, plan.out);
  plan.stride_b = aligned_strides(b, plan.out);
  plan.size_a = element_count(a);
  plan.size_b = element_count(b);
  plan.same = a == b;
  plan.suffix_a = is_suffix(a, plan.out);
  plan.suffix_b = is_suffix(b, plan.out);
  return plan;
}

// Splits a shape around `axis` into (outer, extent, inner) for axis ops.
struct AxisView {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  v.extent = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) {
    v.inner *= s[i];
  }
  return v;
}

int normalize_axis(Op op, int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    fail(op, "axis " + std::to_string(axis) + " out of range for rank " +
                 std::to_string(rank));
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T>& Graph<T>::BackwardContext::input_grad(int k) {
  const NodeId id = graph_->node(self_).inputs[static_cast<std::size_t>(k)];
  auto& slot = (*grads_)[static_cast<std::size_t>(id)];
  auto& touched = (*touched_)[static_cast<std::size_t>(id)];
  if (!touched) {
    slot = Tensor<T>(graph_->shape(id));
    touched = 1;
  }
  return slot;
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw GraphError("node id " + std::to_string(id) + " out of range");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
NodeId Graph<T>::push(Op op, Tensor<T> value, std::vector<NodeId> inputs,
                      BackwardFn backward) {
  Node n{op, std::move(value), {}, {}, false};
  if (record_) {
    for (NodeId in : inputs) n.requires_grad = n.requires_grad || requires_grad(in);
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{Op::kConstant, std::move(value), {}, {}, false});
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
NodeId Graph<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{Op::kParameter, std::move(value), {}, {}, record_});
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b, bool ta, bool tb) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 2) {
    fail(Op::kMatmul, "operands must be rank 2, got " + shape_string(va.shape()) +
                          " and " + shape_string(vb.shape()));
  }
  const std::int64_t m = ta ? va.dim(1) : va.dim(0);
  const std::int64_t ka = ta ? va.dim(0) : va.dim(1);
  const std::int64_t kb = tb ? vb.dim(1) : vb.dim(0);
  const std::int64_t n = tb ? vb.dim(0) : vb.dim(1);
  if (ka != kb) {
    fail(Op::kMatmul, "inner extents differ for " + shape_string(va.shape()) +
                          (ta ? "^T" : "") + " x " + shape_string(vb.shape()) +
                          (tb ? "^T" : ""));
  }
  Tensor<T> out(Shape{m, n});
  if (ka > 0) gemm_acc<T>(as_matrix(out), as_matrix(va), ta, as_matrix(vb), tb);
  return push(Op::kMatmul, std::move(out), {a, b}, [ta, tb](BackwardContext& c) {
    const auto g = as_matrix(c.grad());
    if (c.needs(0)) {
      if (!ta) {
        gemm_acc<T>(as_matrix(c.input_grad(0)), g, false, as_matrix(c.input(1)), !tb);
      } else {
        gemm_acc<T>(as_matrix(c.input_grad(0)), as_matrix(c.input(1)), tb, g, true);
      }
    }
    if (c.needs(1)) {
      if (!tb) {
        gemm_acc<T>(as_matrix(c.input_grad(1)), as_matrix(c.input(0)), !ta, g, false);
      } else {
        gemm_acc<T>(as_matrix(c.input_grad(1)), g, true, as_matrix(c.input(0)), ta);
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::binary(Op op, NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  BroadcastPlan plan = make_plan(op, va.shape(), vb.shape());
  Tensor<T> out(plan.out);
  T* o = out.data();
  const T* pa = va.data();
  const T* pb = vb.data();
  switch (op) {
    case Op::kAdd:
      plan.for_each([&](auto i, auto ia, auto ib) { o[i] = pa[ia] + pb[ib]; });
      break;
    case Op::kSub:
      plan.for_each([&](auto i, auto ia, auto ib) { o[i] = pa[ia] - pb[ib]; });
      break;
    default:
      plan.for_each([&](auto i, auto ia, auto ib) { o[i] = pa[ia] * pb[ib]; });
      break;
  }
  return push(op, std::move(out), {a, b},
              [op, plan = std::move(plan)](BackwardContext& c) {
                const T* g = c.grad().data();
                if (c.needs(0)) {
                  T* ga = c.input_grad(0).data();
                  if (op == Op::kMul) {
                    const T* pb = c.input(1).data();
                    plan.for_each([&](auto i, auto ia, auto ib) { ga[ia] += g[i] * pb[ib]; });
                  } else {
                    plan.for_each([&](auto i, auto ia, auto) { ga[ia] += g[i]; });
                  }
                }
                if (c.needs(1)) {
                  T* gb = c.input_grad(1).data();
                  if (op == Op::kMul) {
                    const T* pa = c.input(0).data();
                    plan.for_each([&](auto i, auto ia, auto ib) { gb[ib] += g[i] * pa[ia]; });
                  } else if (op == Op::kSub) {
                    plan.for_each([&](auto i, auto, auto ib) { gb[ib] -= g[i]; });
                  } else {
                    plan.for_each([&](auto i, auto, auto ib) { gb[ib] += g[i]; });
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  return binary(Op::kAdd, a, b);
}

template <typename T>
NodeId Graph<T>::sub(NodeId a, NodeId b) {
  return binary(Op::kSub, a, b);
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  return binary(Op::kMul, a, b);
}

template <typename T>
NodeId Graph<T>::scale(NodeId x, double factor) {
  const auto& vx = value(x);
  Tensor<T> out(vx.shape());
  const T f = static_cast<T>(factor);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = vx[i] * f;
  return push(Op::kScale, std::move(out), {x}, [f](BackwardContext& c) {
    auto& gx = c.input_grad(0);
    const auto& g = c.grad();
    for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
  });
}

template <typename T>
NodeId Graph<T>::softmax(NodeId x) {
  const auto& vx = value(x);
  if (vx.rank() < 1) fail(Op::kSoftmax, "needs rank >= 1");
  const std::int64_t n = vx.dim(-1);
  const std::int64_t rows = n ? vx.size() / n : 0;
  Tensor<T> out(vx.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = vx.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    const T inv = static_cast<T>(1.0 / total);
    for (std::int64_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return push(Op::kSoftmax, std::move(out), {x}, [n, rows](BackwardContext& c) {
    auto& gx = c.input_grad(0);
    const auto& y = c.output();
    const auto& g = c.grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      const T d = static_cast<T>(dot);
      for (std::int64_t j = 0; j < n; ++j) {
        gx[r * n + j] += y[r * n + j] * (g[r * n + j] - d);
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::log_softmax(NodeId x) {
  const auto& vx = value(x);
  if (vx.rank() < 1) fail(Op::kLogSoftmax, "needs rank >= 1");
  const std::int64_t n = vx.dim(-1);
  const std::int64_t rows = n ? vx.size() / n : 0;
  Tensor<T> out(vx.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = vx.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::int64_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(in[j] - mx));
    const T lse = mx + static_cast<T>(std::log(total));
    for (std::int64_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  return push(Op::kLogSoftmax, std::move(out), {x}, [n, rows](BackwardContext& c) {
    auto& gx = c.input_grad(0);
    const auto& y = c.output();
    const auto& g = c.grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::int64_t j = 0; j < n; ++j) total += g[r * n + j];
      const T s = static_cast<T>(total);
      for (std::int64_t j = 0; j < n; ++j) {
        gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * s;
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const auto& vx = value(x);
  const auto& vg = value(gamma);
  const auto& vb = value(beta);
  if (vx.rank() < 1) fail(Op::kLayerNorm, "needs rank >= 1");
  const std::int64_t n = vx.dim(-1);
  if (vg.shape() != Shape{n} || vb.shape() != Shape{n}) {
    fail(Op::kLayerNorm, "gamma " + shape_string(vg.shape()) + " / beta " +
                             shape_string(vb.shape()) + " do not match last axis of " +
                             shape_string(vx.shape()));
  }
  const std::int64_t rows = n ? vx.size() / n : 0;
  Tensor<T> out(vx.shape());
  std::vector<T> xhat(static_cast<std::size_t>(vx.size()));
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = vx.data() + r * n;
    double mu = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d = in[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = static_cast<T>(inv);
    for (std::int64_t j = 0; j < n; ++j) {
      const T h = static_cast<T>((in[j] - mu) * inv);
      xhat[static_cast<std::size_t>(r * n + j)] = h;
      out[r * n + j] = vg[j] * h + vb[j];
    }
  }
  return push(Op::kLayerNorm, std::move(out), {x, gamma, beta},
              [n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](BackwardContext& c) {
                const auto& g = c.grad();
                const auto& vg = c.input(1);
                if (c.needs(1)) {
                  auto& gg = c.input_grad(1);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < n; ++j) {
                      gg[j] += g[r * n + j] * xhat[static_cast<std::size_t>(r * n + j)];
                    }
                  }
                }
                if (c.needs(2)) {
                  auto& gb = c.input_grad(2);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                  }
                }
                if (c.needs(0)) {
                  auto& gx = c.input_grad(0);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                      const double dh = g[r * n + j] * vg[j];
                      m1 += dh;
                      m2 += dh * xhat[static_cast<std::size_t>(r * n + j)];
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    const double s = rstd[static_cast<std::size_t>(r)];
                    for (std::int64_t j = 0; j < n; ++j) {
                      const double dh = g[r * n + j] * vg[j];
                      gx[r * n + j] += static_cast<T>(
                          s * (dh - m1 - xhat[static_cast<std::size_t>(r * n + j)] * m2));
                    }
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::gelu(NodeId x) {
  const auto& vx = value(x);
  Tensor<T> out(vx.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::int64_t i = 0; i < vx.size(); ++i) {
    out[i] = T{0.5} * vx[i] * (T{1} + std::erf(vx[i] * inv_sqrt2));
  }
  return push(Op::kGelu, std::move(out), {x}, [inv_sqrt2](BackwardContext& c) {
    auto& gx = c.input_grad(0);
    const auto& vx = c.input(0);
    const auto& g = c.grad();
    const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    for (std::int64_t i = 0; i < vx.size(); ++i) {
      const T v = vx[i];
      const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
NodeId Graph<T>::conv1d(NodeId x, NodeId weight, int groups) {
  const auto& vx = value(x);
  const auto& vw = value(weight);
  if (vx.rank() != 2 || vw.rank() != 3) {
    fail(Op::kConv1d, "expects x [L, C] and weight [C_out, C_in/groups, k], got " +
                          shape_string(vx.shape()) + " and " + shape_string(vw.shape()));
  }
  const std::int64_t len = vx.dim(0);
  const std::int64_t cin = vx.dim(1);
  const std::int64_t cout = vw.dim(0);
  const std::int64_t kernel = vw.dim(2);
  if (groups <= 0 || cin % groups != 0 || cout % groups != 0) {
    fail(Op::kConv1d, std::to_string(groups) + " groups do not divide channels " +
                          std::to_string(cin) + " -> " + std::to_string(cout));
  }
  const std::int64_t cin_g = cin / groups;
  const std::int64_t cout_g = cout / groups;
  if (vw.dim(1) != cin_g) {
    fail(Op::kConv1d, "weight " + shape_string(vw.shape()) + " expects " +
                          std::to_string(vw.dim(1)) + " input channels per group, have " +
                          std::to_string(cin_g));
  }
  if (kernel % 2 == 0) fail(Op::kConv1d, "kernel must be odd, got " + std::to_string(kernel));
  const std::int64_t pad = kernel / 2;
  Tensor<T> out(Shape{len, cout});
  for (std::int64_t o = 0; o < cout; ++o) {
    const std::int64_t base = (o / cout_g) * cin_g;
    for (std::int64_t j = 0; j < cin_g; ++j) {
      const T* w = vw.data() + (o * cin_g + j) * kernel;
      for (std::int64_t tau = 0; tau < kernel; ++tau) {
        const std::int64_t shift = tau - pad;
        const std::int64_t lo = std::max<std::int64_t>(0, -shift);
        const std::int64_t hi = std::min<std::int64_t>(len, len - shift);
        for (std::int64_t t = lo; t < hi; ++t) {
          out[t * cout + o] += w[tau] * vx[(t + shift) * cin + base + j];
        }
      }
    }
  }
  return push(Op::kConv1d, std::move(out), {x, weight},
              [len, cin, cout, kernel, cin_g, cout_g, pad](BackwardContext& c) {
                const auto& g = c.grad();
                const auto& vx = c.input(0);
                const auto& vw = c.input(1);
                const bool want_x = c.needs(0);
                const bool want_w = c.needs(1);
                T* gx = want_x ? c.input_grad(0).data() : nullptr;
                T* gw = want_w ? c.input_grad(1).data() : nullptr;
                for (std::int64_t o = 0; o < cout; ++o) {
                  const std::int64_t base = (o / cout_g) * cin_g;
                  for (std::int64_t j = 0; j < cin_g; ++j) {
                    const std::int64_t widx = (o * cin_g + j) * kernel;
                    for (std::int64_t tau = 0; tau < kernel; ++tau) {
                      const std::int64_t shift = tau - pad;
                      const std::int64_t lo = std::max<std::int64_t>(0, -shift);
                      const std::int64_t hi = std::min<std::int64_t>(len, len - shift);
                      T acc{0};
                      for (std::int64_t t = lo; t < hi; ++t) {
                        const T go = g[t * cout + o];
                        const std::int64_t xi = (t + shift) * cin + base + j;
                        if (want_x) gx[xi] += go * vw[widx + tau];
                        acc += go * vx[xi];
                      }
                      if (want_w) gw[widx + tau] += acc;
                    }
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::gather_rows(NodeId table, std::vector<std::int64_t> indices) {
  const auto& vt = value(table);
  if (vt.rank() != 2) fail(Op::kGatherRows, "table must be rank 2, got " + shape_string(vt.shape()));
  const std::int64_t rows = vt.dim(0);
  const std::int64_t d = vt.dim(1);
  const auto n = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(Shape{n, d});
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t r = indices[static_cast<std::size_t>(i)];
    if (r < 0 || r >= rows) {
      fail(Op::kGatherRows, "index " + std::to_string(r) + " outside table " +
                                shape_string(vt.shape()));
    }
    std::copy_n(vt.data() + r * d, d, out.data() + i * d);
  }
  return push(Op::kGatherRows, std::move(out), {table},
              [d, indices = std::move(indices)](BackwardContext& c) {
                auto& gt = c.input_grad(0);
                const auto& g = c.grad();
                for (std::size_t i = 0; i < indices.size(); ++i) {
                  const auto r = indices[i];
                  for (std::int64_t j = 0; j < d; ++j) {
                    gt[r * d + j] += g[static_cast<std::int64_t>(i) * d + j];
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::masked_select(NodeId x, std::span<const std::uint8_t> row_mask) {
  const auto& vx = value(x);
  if (vx.rank() != 2) fail(Op::kMaskedSelect, "input must be rank 2, got " + shape_string(vx.shape()));
  if (static_cast<std::int64_t>(row_mask.size()) != vx.dim(0)) {
    fail(Op::kMaskedSelect, "mask of length " + std::to_string(row_mask.size()) +
                                " for input " + shape_string(vx.shape()));
  }
  std::vector<std::int64_t> rows;
  for (std::size_t i = 0; i < row_mask.size(); ++i) {
    if (row_mask[i]) rows.push_back(static_cast<std::int64_t>(i));
  }
  const std::int64_t d = vx.dim(1);
  Tensor<T> out(Shape{static_cast<std::int64_t>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(vx.data() + rows[i] * d, d, out.data() + static_cast<std::int64_t>(i) * d);
  }
  return push(Op::kMaskedSelect, std::move(out), {x},
              [d, rows = std::move(rows)](BackwardContext& c) {
                auto& gx = c.input_grad(0);
                const auto& g = c.grad();
                for (std::size_t i = 0; i < rows.size(); ++i) {
                  for (std::int64_t j = 0; j < d; ++j) {
                    gx[rows[i] * d + j] += g[static_cast<std::int64_t>(i) * d + j];
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::take_along_rows(NodeId x, std::vector<std::int64_t> columns) {
  const auto& vx = value(x);
  if (vx.rank() != 2 || vx.dim(0) != static_cast<std::int64_t>(columns.size())) {
    fail(Op::kTakeAlongRows, "input " + shape_string(vx.shape()) + " with " +
                                 std::to_string(columns.size()) + " column indices");
  }
  const std::int64_t v = vx.dim(1);
  Tensor<T> out(Shape{static_cast<std::int64_t>(columns.size())});
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const auto col = columns[i];
    if (col < 0 || col >= v) {
      fail(Op::kTakeAlongRows, "column " + std::to_string(col) + " outside " +
                                   shape_string(vx.shape()));
    }
    out[static_cast<std::int64_t>(i)] = vx[static_cast<std::int64_t>(i) * v + col];
  }
  return push(Op::kTakeAlongRows, std::move(out), {x},
              [v, columns = std::move(columns)](BackwardContext& c) {
                auto& gx = c.input_grad(0);
                const auto& g = c.grad();
                for (std::size_t i = 0; i < columns.size(); ++i) {
                  gx[static_cast<std::int64_t>(i) * v + columns[i]] += g[static_cast<std::int64_t>(i)];
                }
              });
}

template <typename T>
NodeId Graph<T>::sum(NodeId x) {
  const auto& vx = value(x);
  double total = 0.0;
  for (std::int64_t i = 0; i < vx.size(); ++i) total += vx[i];
  return push(Op::kSum, Tensor<T>::scalar(static_cast<T>(total)), {x},
              [](BackwardContext& c) {
                auto& gx = c.input_grad(0);
                const T g = c.grad().item();
                for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
              });
}

template <typename T>
NodeId Graph<T>::mean(NodeId x) {
  const auto& vx = value(x);
  if (vx.size() == 0) fail(Op::kMean, "mean of empty tensor " + shape_string(vx.shape()));
  double total = 0.0;
  for (std::int64_t i = 0; i < vx.size(); ++i) total += vx[i];
  const double count = static_cast<double>(vx.size());
  return push(Op::kMean, Tensor<T>::scalar(static_cast<T>(total / count)), {x},
              [count](BackwardContext& c) {
                auto& gx = c.input_grad(0);
                const T g = static_cast<T>(c.grad().item() / count);
                for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
              });
}

template <typename T>
NodeId Graph<T>::sum_squares(NodeId x) {
  const auto& vx = value(x);
  double total = 0.0;
  for (std::int64_t i = 0; i < vx.size(); ++i) {
    total += static_cast<double>(vx[i]) * static_cast<double>(vx[i]);
  }
  return push(Op::kSumSquares, Tensor<T>::scalar(static_cast<T>(total)), {x},
              [](BackwardContext& c) {
                auto& gx = c.input_grad(0);
                const auto& vx = c.input(0);
                const T g = c.grad().item();
                for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += T{2} * g * vx[i];
              });
}

template <typename T>
NodeId Graph<T>::concat(std::span<const NodeId> parts, int axis) {
  if (parts.empty()) fail(Op::kConcat, "no inputs");
  const Shape first = shape(parts[0]);
  const int ax = normalize_axis(Op::kConcat, axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  std::vector<std::int64_t> extents;
  for (NodeId p : parts) {
    const Shape& s = shape(p);
    bool ok = s.size() == first.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) {
      ok = k == static_cast<std::size_t>(ax) || s[k] == first[k];
    }
    if (!ok) {
      fail(Op::kConcat, "shape " + shape_string(s) + " incompatible with " +
                            shape_string(first) + " along axis " + std::to_string(ax));
    }
    extents.push_back(s[static_cast<std::size_t>(ax)]);
    out_shape[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
  }
  const AxisView view = axis_view(out_shape, ax);
  Tensor<T> out(out_shape);
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = value(parts[p]);
    const std::int64_t block = extents[p] * view.inner;
    for (std::int64_t o = 0; o < view.outer; ++o) {
      std::copy_n(v.data() + o * block, block,
                  out.data() + o * view.extent * view.inner + offset * view.inner);
    }
    offset += extents[p];
  }
  return push(Op::kConcat, std::move(out), {parts.begin(), parts.end()},
              [view, extents = std::move(extents)](BackwardContext& c) {
                const auto& g = c.grad();
                std::int64_t offset = 0;
                for (std::size_t p = 0; p < extents.size(); ++p) {
                  const std::int64_t block = extents[p] * view.inner;
                  if (c.needs(static_cast<int>(p))) {
                    auto& gp = c.input_grad(static_cast<int>(p));
                    for (std::int64_t o = 0; o < view.outer; ++o) {
                      const T* src = g.data() + o * view.extent * view.inner + offset * view.inner;
                      T* dst = gp.data() + o * block;
                      for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                  }
                  offset += extents[p];
                }
              });
}

template <typename T>
NodeId Graph<T>::transpose(NodeId x) {
  const auto& vx = value(x);
  if (vx.rank() != 2) fail(Op::kTranspose, "input must be rank 2, got " + shape_string(vx.shape()));
  const std::int64_t r = vx.dim(0);
  const std::int64_t c = vx.dim(1);
  Tensor<T> out(Shape{c, r});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = vx[i * c + j];
  }
  return push(Op::kTranspose, std::move(out), {x}, [r, c](BackwardContext& ctx) {
    auto& gx = ctx.input_grad(0);
    const auto& g = ctx.grad();
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    }
  });
}

template <typename T>
NodeId Graph<T>::slice(NodeId x, int axis, std::int64_t begin, std::int64_t end) {
  const auto& vx = value(x);
  const int ax = normalize_axis(Op::kSlice, axis, vx.rank());
  const std::int64_t extent = vx.dim(ax);
  if (begin < 0 || end > extent || begin > end) {
    fail(Op::kSlice, "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside axis " + std::to_string(ax) + " of " +
                         shape_string(vx.shape()));
  }
  const AxisView view = axis_view(vx.shape(), ax);
  Shape out_shape = vx.shape();
  out_shape[static_cast<std::size_t>(ax)] = end - begin;
  Tensor<T> out(out_shape);
  const std::int64_t block = (end - begin) * view.inner;
  for (std::int64_t o = 0; o < view.outer; ++o) {
    std::copy_n(vx.data() + o * view.extent * view.inner + begin * view.inner, block,
                out.data() + o * block);
  }
  return push(Op::kSlice, std::move(out), {x}, [view, begin, block](BackwardContext& c) {
    auto& gx = c.input_grad(0);
    const auto& g = c.grad();
    for (std::int64_t o = 0; o < view.outer; ++o) {
      T* dst = gx.data() + o * view.extent * view.inner + begin * view.inner;
      const T* src = g.data() + o * block;
      for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
NodeId Graph<T>::reshape(NodeId x, Shape shape) {
  const auto& vx = value(x);
  if (element_count(shape) != vx.size()) {
    fail(Op::kReshape, "cannot reshape " + shape_string(vx.shape()) + " to " + shape_string(shape));
  }
  return push(Op::kReshape, vx.reshaped(std::move(shape)), {x}, [](BackwardContext& c) {
    auto& gx = c.input_grad(0);
    const auto& g = c.grad();
    for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
std::vector<Tensor<T>> Graph<T>::backward(NodeId loss) const {
  if (!record_) throw GraphError("backward: graph was built without recording");
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw GraphError("backward: loss must be scalar, got shape " +
                     shape_string(root.value.shape()));
  }
  std::vector<Tensor<T>> grads(nodes_.size());
  std::vector<std::uint8_t> touched(nodes_.size(), 0);
  grads[static_cast<std::size_t>(loss)] = Tensor<T>(root.value.shape(), T{1});
  touched[static_cast<std::size_t>(loss)] = 1;
  BackwardContext ctx;
  ctx.graph_ = this;
  ctx.grads_ = &grads;
  ctx.touched_ = &touched;
  for (NodeId id = loss; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!touched[static_cast<std::size_t>(id)] || !n.backward) continue;
    ctx.self_ = id;
    ctx.grad_ = &grads[static_cast<std::size_t>(id)];
    n.backward(ctx);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!touched[i]) grads[i] = Tensor<T>(nodes_[i].value.shape());
  }
  return grads;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace duet
