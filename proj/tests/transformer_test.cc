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

#include <gtest/gtest.h>

#include "duet/common.h"
#include "duet/transformer.h"
#include "test_util.h"

namespace duet {
namespace {

using testing::random_tensor;

BlockConfig small_block(int layers = 2) {
  BlockConfig c;
  c.d = 8;
  c.heads = 2;
  c.ffn = 16;
  c.layers = layers;
  c.conv_kernel = 3;
  c.conv_groups = 2;
  return c;
}

std::vector<Tensor<double>> run_stack(const ParameterStore<double>& store, const BlockConfig& cfg,
                                      const Tensor<double>& x) {
  Graph<double> g(false);
  Binder<double> bind(g, store);
  std::vector<Tensor<double>> out;
  for (NodeId id : encode_stack(bind, "s.", cfg, g.constant(x))) out.push_back(g.value(id));
  return out;
}

TEST(Alibi, SlopesAreGeometric) {
  const auto s = alibi_slopes(4);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_DOUBLE_EQ(s[0], std::pow(2.0, -2.0));
  EXPECT_DOUBLE_EQ(s[3], std::pow(2.0, -8.0));
  for (std::size_t h = 1; h + 1 < s.size(); ++h) {
    EXPECT_DOUBLE_EQ(s[h] / s[h - 1], s[h + 1] / s[h]);
  }
  EXPECT_DOUBLE_EQ(alibi_slopes(16).back(), std::pow(2.0, -8.0));
}

TEST(Alibi, BiasIsSymmetricDistance) {
  const auto b = alibi_bias<double>(0.5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(b(i, j), -0.5 * std::abs(i - j));
  }
}

TEST(BlockConfig, Validation) {
  BlockConfig c = small_block();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_block(3);
  c.use_unet_skips = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_block();
  c.ffn = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_block();
  c.conv_groups = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EncodeStack, OneOutputPerLayer) {
  Rng rng(1);
  const auto cfg = small_block(3);
  ParameterStore<double> store;
  init_stack(store, "s.", cfg, rng);
  const auto out = run_stack(store, cfg, random_tensor<double>({5, 8}, rng));
  ASSERT_EQ(out.size(), 3u);
  for (const auto& o : out) EXPECT_EQ(o.shape(), (Shape{5, 8}));
}

TEST(EncodeStack, ResidualIdentityWithZeroBranches) {
  Rng rng(2);
  const auto cfg = small_block(1);
  ParameterStore<double> store;
  init_stack(store, "s.", cfg, rng);
  for (auto& [name, v] : store.entries()) {
    if (name.find(".attn.") != std::string::npos || name.find(".ffn.") != std::string::npos) {
      for (auto& e : v.values()) e = 0.0;
    }
  }
  const auto x = random_tensor<double>({6, 8}, rng);
  const auto out = run_stack(store, cfg, x);
  Graph<double> g;
  const auto expect = g.value(g.layer_norm(g.constant(x), g.constant(store.get("s.final_ln.g")),
                                           g.constant(store.get("s.final_ln.b"))));
  EXPECT_LT(max_abs_diff(out.back(), expect), 1e-12);
}

TEST(EncodeStack, AlibiMakesOutputsPositionSensitive) {
  Rng rng(3);
  auto cfg = small_block(2);
  ParameterStore<double> store;
  init_stack(store, "s.", cfg, rng);
  const auto x = random_tensor<double>({8, 8}, rng);
  Tensor<double> swapped = x;
  for (int c = 0; c < 8; ++c) std::swap(swapped(0, c), swapped(7, c));
  auto permuted_back = [](Tensor<double> t) {
    for (int c = 0; c < 8; ++c) std::swap(t(0, c), t(7, c));
    return t;
  };
  const auto a = run_stack(store, cfg, x).back();
  const auto b = permuted_back(run_stack(store, cfg, swapped).back());
  EXPECT_GT(max_abs_diff(a, b), 1e-6);

  cfg.use_alibi = false;
  const auto c = run_stack(store, cfg, x).back();
  const auto d = permuted_back(run_stack(store, cfg, swapped).back());
  EXPECT_LT(max_abs_diff(c, d), 1e-12);
}

TEST(EncodeStack, RejectsWrongWidth) {
  Rng rng(4);
  const auto cfg = small_block();
  ParameterStore<double> store;
  init_stack(store, "s.", cfg, rng);
  EXPECT_THROW(run_stack(store, cfg, Tensor<double>(Shape{3, 6})), ConfigError);
}

TEST(EncodeStack, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  auto cfg = small_block(2);
  cfg.use_unet_skips = true;
  ParameterStore<double> store;
  init_stack(store, "s.", cfg, rng);
  init_conv_positional(store, "s.", cfg, rng);
  store.add("x", random_tensor<double>({5, 8}, rng));
  const auto w = random_tensor<double>({5, 8}, rng);
  const auto res = testing::check_gradients(store, [&](Binder<double>& b) {
    auto& g = b.graph();
    const NodeId h = g.add(b("x"), conv_positional(b, "s.", cfg, b("x")));
    const auto layers = encode_stack(b, "s.", cfg, h);
    return g.sum(g.mul(layers.back(), g.constant(w)));
  }, 1e-5, 1e-3);
  EXPECT_LE(res.max_rel, 1e-6) << res.worst;
}

Tensor<double> conv_pos(const ParameterStore<double>& store, const BlockConfig& cfg,
                        const Tensor<double>& x) {
  Graph<double> g(false);
  Binder<double> bind(g, store);
  return g.value(conv_positional(bind, "s.", cfg, g.constant(x)));
}

TEST(ConvPositional, ZeroInZeroOut) {
  Rng rng(6);
  const auto cfg = small_block();
  ParameterStore<double> store;
  init_conv_positional(store, "s.", cfg, rng);
  const auto y = conv_pos(store, cfg, Tensor<double>(Shape{7, 8}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvPositional, ImpulseSupportMatchesKernel) {
  Rng rng(7);
  const auto cfg = small_block();
  ParameterStore<double> store;
  init_conv_positional(store, "s.", cfg, rng);
  Tensor<double> x(Shape{9, 8});
  for (int c = 0; c < 8; ++c) x(4, c) = 1.0;
  const auto y = conv_pos(store, cfg, x);
  for (int i = 0; i < 9; ++i) {
    double row = 0.0;
    for (int c = 0; c < 8; ++c) row += std::abs(y(i, c));
    if (i >= 3 && i <= 5) {
      EXPECT_GT(row, 0.0) << i;
    } else {
      EXPECT_EQ(row, 0.0) << i;
    }
  }
}

TEST(ConvPositional, PreservesLength) {
  Rng rng(8);
  auto cfg = small_block();
  cfg.conv_kernel = 15;
  ParameterStore<double> store;
  init_conv_positional(store, "s.", cfg, rng);
  for (int len : {1, 7, 20}) {
    EXPECT_EQ(conv_pos(store, cfg, random_tensor<double>({len, 8}, rng)).shape(), (Shape{len, 8}));
  }
}

class UnetCombine : public ::testing::Test {
 protected:
  Rng rng{9};
  Tensor<double> early = random_tensor<double>({4, 3}, rng);
  Tensor<double> late = random_tensor<double>({4, 3}, rng);

  Tensor<double> combine(bool pick_early) {
    Tensor<double> w(Shape{3, 6});
    for (int i = 0; i < 3; ++i) w(i, pick_early ? i : 3 + i) = 1.0;
    Graph<double> g;
    return g.value(unet_combine(g, g.constant(early), g.constant(late), g.constant(w)));
  }
};

TEST_F(UnetCombine, SelectsEarlyHalf) { EXPECT_EQ(combine(true), early); }
TEST_F(UnetCombine, SelectsLateHalf) { EXPECT_EQ(combine(false), late); }

TEST_F(UnetCombine, ShapeMismatchFails) {
  Graph<double> g;
  EXPECT_ANY_THROW(unet_combine(g, g.constant(early), g.constant(Tensor<double>(Shape{5, 3})),
                                g.constant(Tensor<double>(Shape{3, 6}))));
}

}  // namespace
}  // namespace duet
