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
#include "duet/sampler.h"
#include "duet/trainer.h"
#include "test_util.h"

namespace duet {
namespace {

using testing::random_tensor;
using testing::tiny_model;

TEST(SolverConfig, NfeAccounting) {
  EXPECT_EQ((SolverConfig{0.0625, 1.9}).nfe(), 32);
  EXPECT_EQ((SolverConfig{0.25, 1.0}).nfe(), 8);
  EXPECT_EQ((SolverConfig{0.25, 1.0}).steps(), 4);
  EXPECT_FALSE((SolverConfig{0.25, 1.0}).guided());
  EXPECT_TRUE((SolverConfig{0.25, 1.9}).guided());
  EXPECT_THROW((SolverConfig{0.0, 1.0}).validate(), ConfigError);
  EXPECT_THROW((SolverConfig{1.5, 1.0}).validate(), ConfigError);
  EXPECT_THROW((SolverConfig{0.3, 1.0}).validate(), ConfigError);
}

TEST(Midpoint, ExactOnConstantField) {
  const auto x0 = Tensor<double>::vector({1.0, -2.0});
  const FieldFn<double> c = [](const Tensor<double>&, double) {
    return Tensor<double>::vector({0.5, 3.0});
  };
  for (double h : {1.0, 0.5, 0.125}) {
    const auto r = midpoint_solve(c, x0, h);
    EXPECT_NEAR(r.x[0], 1.5, 1e-14);
    EXPECT_NEAR(r.x[1], 1.0, 1e-14);
    EXPECT_EQ(r.evaluations, static_cast<int>(std::lround(2 / h)));
  }
}

TEST(Midpoint, SecondOrderOnDecay) {
  const FieldFn<double> decay = [](const Tensor<double>& x, double) {
    Tensor<double> v = x;
    for (auto& e : v.values()) e = -e;
    return v;
  };
  const auto x0 = Tensor<double>::vector({1.0});
  std::vector<double> err;
  for (double h : {0.25, 0.125, 0.0625}) {
    err.push_back(std::abs(midpoint_solve(decay, x0, h).x[0] - std::exp(-1.0)));
  }
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double order = std::log2(err[i - 1] / err[i]);
    EXPECT_GE(order, 1.8);
    EXPECT_LE(order, 2.2);
  }
}

TEST(CfgField, Examples) {
  const auto vc = Tensor<double>::vector({1.0, 2.0});
  const auto vu = Tensor<double>::vector({-1.0, 0.5});
  EXPECT_EQ(cfg_field(vc, vu, 0.0), vu);
  EXPECT_EQ(cfg_field(vc, vu, 1.0), vc);
  EXPECT_EQ(cfg_field(vc, vc, 1.9), vc);
  const auto g = cfg_field(vc, vu, 1.9);
  EXPECT_DOUBLE_EQ(g[0], -1.0 + 1.9 * 2.0);
  const auto e = cfg_field(vc, vu, 0.7, GuidanceForm::kExtrapolate);
  EXPECT_DOUBLE_EQ(e[0], 1.7 * 1.0 - 0.7 * -1.0);
  EXPECT_THROW(cfg_field(vc, Tensor<double>::vector({1.0}), 1.0), ConfigError);
}

TEST(PromptMask, FullFractionCoversEverything) {
  Rng rng(1);
  EXPECT_EQ(prompt_mask(40, 1.0, 1.0, rng).count(), 40);
}

TEST(PromptMask, ContiguousWithExpectedMeanFraction) {
  Rng rng(2);
  double total = 0.0;
  const int draws = 10000;
  const std::int64_t len = 1000;
  for (int i = 0; i < draws; ++i) {
    const auto m = prompt_mask(len, 0.7, 1.0, rng);
    const auto idx = m.indices();
    ASSERT_FALSE(idx.empty());
    ASSERT_EQ(idx.back() - idx.front() + 1, static_cast<std::int64_t>(idx.size()));
    total += static_cast<double>(idx.size()) / len;
  }
  EXPECT_NEAR(total / draws, 0.85, 0.01);
}

class Generation : public ::testing::Test {
 protected:
  Rng rng{3};
  ModelConfig cfg = tiny_model();
  ParameterStore<double> params = init_model<double>(cfg, rng);
  Tensor<double> prompt = random_tensor<double>({7, 4}, rng);

  Tensor<double> condition(const ConditionSet<double>& cs) {
    Graph<double> g(false);
    Binder<double> b(g, params);
    return g.value(build_condition(b, cfg, cs, 7));
  }
};

TEST_F(Generation, DropoutNullsBothConditions) {
  ConditionSet<double> full;
  full.prompt = prompt;
  full.phones = {0, 1, 2, 2, 1, 0, 1};
  full.region = MaskSpec::from_indices(7, std::vector<std::int64_t>{4, 5, 6});
  ConditionSet<double> dropped = full;
  dropped.dropped = true;
  EXPECT_EQ(condition(dropped), condition(ConditionSet<double>{}));
  ConditionSet<double> text_only;
  text_only.phones = full.phones;
  ConditionSet<double> audio_only = full;
  audio_only.phones.clear();
  EXPECT_NE(condition(dropped), condition(text_only));
  EXPECT_NE(condition(dropped), condition(audio_only));
}

TEST_F(Generation, DeterministicForSeed) {
  ConditionSet<double> cs;
  cs.prompt = prompt;
  const SolverConfig solver{0.25, 1.9};
  Rng a(9), b(9);
  EXPECT_EQ(generate(params, cfg, cs, solver, 7, a).x, generate(params, cfg, cs, solver, 7, b).x);
}

TEST_F(Generation, EvaluationCounts) {
  ConditionSet<double> cs;
  cs.prompt = prompt;
  Rng r(4);
  const auto plain = generate(params, cfg, cs, SolverConfig{0.25, 1.0}, 7, r);
  EXPECT_EQ(plain.nfe, 8);
  EXPECT_EQ(plain.decoder_passes, 8);
  const auto guided = generate(params, cfg, cs, SolverConfig{0.0625, 1.9}, 7, r);
  EXPECT_EQ(guided.nfe, 32);
  EXPECT_EQ(guided.decoder_passes, 64);
}

TEST_F(Generation, MissingWeightsFail) {
  Rng r(5);
  EXPECT_THROW(generate(ParameterStore<double>{}, cfg, ConditionSet<double>{}, SolverConfig{}, 7, r),
               ConfigError);
}

// Decoder trained on a single point learns to transport all noise to it.
TEST(ToyFlow, PointMassOverfit) {
  Rng rng(6);
  ModelConfig cfg = tiny_model();
  cfg.decoder.input_dim = 2;
  cfg.encoder.input_dim = 2;
  cfg.decoder.blocks.d = 16;
  cfg.encoder.blocks.d = 16;
  cfg.decoder.blocks.ffn = 32;
  cfg.encoder.blocks.ffn = 32;
  ParameterStore<double> params = init_model<double>(cfg, rng);
  const auto target = Tensor<double>::matrix({{1.5, -0.5}});
  ParameterStore<double> m, v;
  for (const auto& [name, p] : params.entries()) {
    m.add(name, Tensor<double>(p.shape()));
    v.add(name, Tensor<double>(p.shape()));
  }
  const auto trainable = [](std::string_view n) { return n.rfind("encoder.", 0) != 0; };
  for (int step = 1; step <= 3000; ++step) {
    GradMap<double> grads;
    for (int b = 0; b < 8; ++b) {
      Graph<double> g;
      Binder<double> bind(g, params, trainable);
      const auto x0 = random_tensor<double>({1, 2}, rng);
      const double t = sample_time(TimeSampling::kUniform, rng);
      const auto fs = ot_path(x0, target, t, cfg.decoder.sigma_min);
      const auto cond = build_condition(bind, cfg, ConditionSet<double>{}, 1);
      const auto pred = decoder_forward(bind, cfg.decoder, g.constant(fs.phi), t, cond);
      for (auto& [name, gr] : bind.collect(g.backward(cfm_loss(g, pred, fs.u, MaskSpec::all(1))))) {
        auto it = grads.find(name);
        if (it == grads.end()) {
          grads.emplace(name, gr);
        } else {
          for (std::int64_t i = 0; i < gr.size(); ++i) it->second[i] += gr[i];
        }
      }
    }
    clip_gradients(grads, 1.0);
    const double lr = lr_at(step, 3000, 50, 3e-3);
    for (auto& [name, gr] : grads) {
      adam_update(params.get_mut(name), gr, m.get_mut(name), v.get_mut(name), step, lr, 0.9, 0.98,
                  1e-8);
    }
  }
  double norm = std::hypot(1.5, 0.5);
  for (int s = 0; s < 5; ++s) {
    const auto out = generate(params, cfg, ConditionSet<double>{}, SolverConfig{0.0625, 1.0}, 1, rng);
    EXPECT_LE(std::hypot(out.x[0] - 1.5, out.x[1] + 0.5), 0.1 * norm);
  }
}

}  // namespace
}  // namespace duet
