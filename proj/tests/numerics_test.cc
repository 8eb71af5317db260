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

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "duet/graph.h"
#include "duet/params.h"
#include "duet/rng.h"
#include "duet/tensor.h"
#include "test_util.h"

namespace duet {
namespace {

using testing::check_gradients;
using testing::random_tensor;

TEST(Tensor, ShapeAndElements) {
  Tensor<double> t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_EQ(t(1, 2), 1.5);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  const auto m = Tensor<double>::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(m.slice_rows(1, 3), Tensor<double>::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(Tensor<double>::scalar(4.0).item(), 4.0);
}

TEST(Tensor, Broadcasting) {
  EXPECT_EQ(broadcast_shapes({3, 4}, {4}), (Shape{3, 4}));
  EXPECT_EQ(broadcast_shapes({3, 1}, {1, 4}), (Shape{3, 4}));
  EXPECT_EQ(broadcast_shapes({}, {2, 2}), (Shape{2, 2}));
  EXPECT_THROW(broadcast_shapes({3, 4}, {3}), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
  }
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, StateRoundTrip) {
  Rng a(7);
  for (int i = 0; i < 10; ++i) a.normal();
  Rng b;
  b.restore(a.state());
  EXPECT_EQ(a.uniform(), b.uniform());
  EXPECT_THROW(b.restore("not a state"), std::exception);
}

TEST(Rng, DistributionMoments) {
  Rng r(1);
  double s = 0, s2 = 0, u = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    u += r.uniform();
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(u / n, 0.5, 0.005);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(2, 5);
    ASSERT_GE(v, 2);
    ASSERT_LE(v, 5);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Rng, DerivedStreamsDiffer) {
  Rng base(3);
  Rng d1 = base.derive(1), d2 = base.derive(2);
  EXPECT_NE(d1.next_u64(), d2.next_u64());
  EXPECT_EQ(base.derive(1).next_u64(), Rng(3).derive(1).next_u64());
}

TEST(Graph, MatmulIdentity) {
  Graph<double> g;
  const auto a = g.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  const auto i = g.constant(Tensor<double>::matrix({{1, 0}, {0, 1}}));
  EXPECT_EQ(g.value(g.matmul(a, i)), Tensor<double>::matrix({{1, 2}, {3, 4}}));
}

TEST(Graph, SoftmaxSymmetric) {
  Graph<double> g;
  const auto s = g.softmax(g.constant(Tensor<double>::vector({0, 0})));
  EXPECT_EQ(g.value(s), Tensor<double>::vector({0.5, 0.5}));
}

TEST(Graph, LayerNormConstantRowGivesBias) {
  Graph<double> g;
  const auto x = g.constant(Tensor<double>::vector({3, 3, 3, 3}));
  const auto gamma = g.constant(Tensor<double>::vector({2, 2, 2, 2}));
  const auto beta = g.constant(Tensor<double>::vector({0, 0, 0, 0}));
  const auto y = g.value(g.layer_norm(x, gamma, beta));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const auto beta2 = g.constant(Tensor<double>::vector({1, -1, 0.5, 0}));
  EXPECT_EQ(g.value(g.layer_norm(x, gamma, beta2)), Tensor<double>::vector({1, -1, 0.5, 0}));
}

TEST(Graph, SumSquaresGradient) {
  Graph<double> g;
  const auto x = g.parameter(Tensor<double>::vector({1, 2}));
  const auto grads = g.backward(g.sum_squares(x));
  EXPECT_EQ(grads[static_cast<std::size_t>(x)], Tensor<double>::vector({2, 4}));
}

TEST(Graph, MaskedSelectDeadBranchIsZero) {
  Graph<double> g;
  const auto x = g.parameter(Tensor<double>::matrix({{1, 2}, {3, 4}, {5, 6}}));
  const std::vector<std::uint8_t> mask{0, 1, 0};
  const auto grads = g.backward(g.sum(g.masked_select(x, mask)));
  EXPECT_EQ(grads[static_cast<std::size_t>(x)],
            Tensor<double>::matrix({{0, 0}, {1, 1}, {0, 0}}));
}

TEST(Graph, NonScalarLossFails) {
  Graph<double> g;
  const auto x = g.parameter(Tensor<double>::vector({1, 2}));
  EXPECT_THROW(g.backward(x), GraphError);
}

TEST(Graph, ShapeErrorsNameTheOp) {
  Graph<double> g;
  const auto a = g.constant(Tensor<double>(Shape{2, 3}));
  const auto b = g.constant(Tensor<double>(Shape{2, 3}));
  try {
    g.matmul(a, b);
    FAIL() << "expected a failure";
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(g.add(g.constant(Tensor<double>(Shape{3, 4})), g.constant(Tensor<double>(Shape{3}))),
               std::exception);
}

TEST(Graph, BackwardIsPure) {
  Rng rng(5);
  Graph<double> g;
  const auto w = g.parameter(random_tensor<double>({3, 4}, rng));
  const auto x = g.constant(random_tensor<double>({5, 4}, rng));
  const auto loss = g.mean(g.gelu(g.matmul(x, w, false, true)));
  const auto a = g.backward(loss);
  const auto b = g.backward(loss);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Graph, UnreachedLeavesGetZero) {
  Graph<double> g;
  const auto used = g.parameter(Tensor<double>::vector({1, 2}));
  const auto unused = g.parameter(Tensor<double>::vector({3, 4}));
  const auto grads = g.backward(g.sum(used));
  EXPECT_EQ(grads[static_cast<std::size_t>(unused)], Tensor<double>(Shape{2}));
}

// Gradient checks per primitive. Each loss is sum(op(inputs) * R) for a
// fixed random R so every output element contributes.
class PrimitiveGradient : public ::testing::Test {
 protected:
  Rng rng{11};
  ParameterStore<double> store;

  NodeId weighted(Binder<double>& b, NodeId y) {
    auto& g = b.graph();
    Rng r(99);
    return g.sum(g.mul(y, g.constant(random_tensor<double>(g.shape(y), r))));
  }

  void expect_ok(const testing::LossFn& fn) {
    const auto res = check_gradients(store, fn);
    EXPECT_GT(res.checked, 0);
    EXPECT_LE(res.max_rel, 1e-6) << res.worst;
  }
};

TEST_F(PrimitiveGradient, Matmul) {
  store.add("a", random_tensor<double>({3, 4}, rng));
  store.add("b", random_tensor<double>({4, 2}, rng));
  store.add("bt", random_tensor<double>({2, 4}, rng));
  store.add("at", random_tensor<double>({4, 3}, rng));
  expect_ok([&](Binder<double>& b) {
    auto& g = b.graph();
    const auto y1 = g.matmul(b("a"), b("b"));
    const auto y2 = g.matmul(b("a"), b("bt"), false, true);
    const auto y3 = g.matmul(b("at"), b("b"), true, false);
    const auto y4 = g.matmul(b("at"), b("bt"), true, true);
    return g.add(g.add(weighted(b, y1), weighted(b, y2)), g.add(weighted(b, y3), weighted(b, y4)));
  });
}

TEST_F(PrimitiveGradient, BroadcastArithmetic) {
  store.add("x", random_tensor<double>({3, 4}, rng));
  store.add("row", random_tensor<double>({4}, rng));
  store.add("col", random_tensor<double>({3, 1}, rng));
  expect_ok([&](Binder<double>& b) {
    auto& g = b.graph();
    const auto y = g.mul(g.sub(g.add(b("x"), b("row")), b("col")), b("x"));
    return weighted(b, g.scale(g.mul(y, b("col")), -0.7));
  });
}

TEST_F(PrimitiveGradient, SoftmaxAndLogSoftmax) {
  store.add("x", random_tensor<double>({3, 5}, rng));
  expect_ok([&](Binder<double>& b) {
    auto& g = b.graph();
    return g.add(weighted(b, g.softmax(b("x"))), weighted(b, g.log_softmax(b("x"))));
  });
}

TEST_F(PrimitiveGradient, LayerNorm) {
  store.add("x", random_tensor<double>({4, 6}, rng));
  store.add("gamma", random_tensor<double>({6}, rng));
  store.add("beta", random_tensor<double>({6}, rng));
  expect_ok([&](Binder<double>& b) {
    return weighted(b, b.graph().layer_norm(b("x"), b("gamma"), b("beta")));
  });
}

TEST_F(PrimitiveGradient, Gelu) {
  store.add("x", random_tensor<double>({4, 5}, rng, 2.0));
  expect_ok([&](Binder<double>& b) { return weighted(b, b.graph().gelu(b("x"))); });
}

TEST_F(PrimitiveGradient, GroupedConv) {
  store.add("x", random_tensor<double>({7, 4}, rng));
  store.add("w", random_tensor<double>({4, 2, 3}, rng));
  expect_ok([&](Binder<double>& b) { return weighted(b, b.graph().conv1d(b("x"), b("w"), 2)); });
}

TEST_F(PrimitiveGradient, GatherWithRepeats) {
  store.add("table", random_tensor<double>({5, 3}, rng));
  expect_ok([&](Binder<double>& b) {
    return weighted(b, b.graph().gather_rows(b("table"), {0, 4, 4, 2, 0, 0}));
  });
}

TEST_F(PrimitiveGradient, MaskedSelectAndTake) {
  store.add("x", random_tensor<double>({5, 4}, rng));
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
  expect_ok([&](Binder<double>& b) {
    auto& g = b.graph();
    const auto sel = g.masked_select(b("x"), mask);
    return g.add(weighted(b, sel), weighted(b, g.take_along_rows(g.log_softmax(sel), {3, 0, 2})));
  });
}

TEST_F(PrimitiveGradient, Reductions) {
  store.add("x", random_tensor<double>({3, 4}, rng));
  expect_ok([&](Binder<double>& b) {
    auto& g = b.graph();
    return g.add(g.scale(g.mean(b("x")), 3.0),
                 g.add(g.sum_squares(b("x")), g.scale(g.sum(b("x")), 0.5)));
  });
}

TEST_F(PrimitiveGradient, ConcatSliceTransposeReshape) {
  store.add("a", random_tensor<double>({3, 2}, rng));
  store.add("b", random_tensor<double>({3, 4}, rng));
  store.add("c", random_tensor<double>({2, 2}, rng));
  expect_ok([&](Binder<double>& b) {
    auto& g = b.graph();
    const std::vector<NodeId> cols{b("a"), b("b")};
    const std::vector<NodeId> rows{b("a"), b("c")};
    const auto wide = g.concat(cols, 1);
    const auto tall = g.concat(rows, 0);
    const auto part = g.slice(wide, 1, 1, 5);
    const auto back = g.reshape(g.transpose(part), Shape{2, 6});
    return g.add(g.add(weighted(b, back), weighted(b, tall)), weighted(b, g.slice(tall, 0, 2, 5)));
  });
}

}  // namespace
}  // namespace duet
