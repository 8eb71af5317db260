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

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "duet/config.h"
#include "duet/graph.h"
#include "duet/model.h"
#include "duet/params.h"
#include "duet/rng.h"
#include "duet/tensor.h"

namespace duet::testing {

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::int64_t checked = 0;
};

using LossFn = std::function<NodeId(Binder<double>&)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares backward() against central differences for every element of
// every store entry accepted by `trainable`.
inline GradCheck check_gradients(const ParameterStore<double>& store, const LossFn& loss,
                                 double h = 1e-5, double floor = 1e-6,
                                 Binder<double>::Predicate trainable = nullptr) {
  if (!trainable) trainable = [](std::string_view) { return true; };
  Graph<double> g;
  Binder<double> bind(g, store, trainable);
  const NodeId l = loss(bind);
  const auto grads = bind.collect(g.backward(l));
  auto eval = [&](const ParameterStore<double>& s) {
    Graph<double> g2(false);
    Binder<double> b2(g2, s);
    return g2.value(loss(b2)).item();
  };
  GradCheck out;
  ParameterStore<double> work = store;
  for (const auto& [name, grad] : grads) {
    Tensor<double>& p = work.get_mut(name);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = eval(work);
      p[i] = orig - h;
      const double down = eval(work);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = relative_error(grad[i], numeric, floor);
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(grad[i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(scale * rng.normal());
  return t;
}

// Small model for fast tests: d_x=4, d=8, 2 encoder and 2 decoder layers.
inline ModelConfig tiny_model(int decoder_layers = 2) {
  ModelConfig m;
  m.encoder.input_dim = 4;
  m.encoder.blocks = BlockConfig{8, 2, 16, 2, true, false, 3, 2};
  m.encoder.codebook_size = 5;
  m.encoder.top_k = 2;
  m.decoder.input_dim = 4;
  m.decoder.blocks = BlockConfig{8, 2, 16, decoder_layers, true, decoder_layers % 2 == 0, 3, 2};
  m.decoder.encoder_layers = 2;
  m.decoder.n_phones = 3;
  return m;
}

// Run configuration small enough for many optimizer steps per second.
inline RunConfig tiny_run(std::vector<std::string> extra = {}) {
  std::vector<std::string> o{
      "data.input_dim=4",     "data.n_phones=4",       "data.n_speakers=2",
      "data.n_utterances=6",  "data.min_length=10",    "data.max_length=20",
      "data.batch_size=3",    "data.max_frames=16",    "data.mask_prob=0.1",
      "data.mask_span=3",     "model.d=16",            "model.heads=2",
      "model.ffn=32",         "model.encoder_layers=2", "model.decoder_layers=2",
      "model.conv_kernel=3",  "model.conv_groups=2",   "model.codebook_size=8",
      "train.total_steps=60", "train.warmup_steps=5",  "finetune.total_steps=40",
      "finetune.warmup_steps=4", "tokenize.k=8",       "tokenize.residual_k=8",
      "analyze.k=8",          "sample.count=2"};
  o.insert(o.end(), extra.begin(), extra.end());
  return apply_overrides(default_config(), o);
}

}  // namespace duet::testing
