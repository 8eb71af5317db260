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
#include <span>
#include <vector>

#include "duet/encoder.h"
#include "duet/graph.h"
#include "duet/params.h"
#include "duet/rng.h"
#include "duet/transformer.h"

namespace duet {

struct DecoderConfig {
  int input_dim = 8;
  BlockConfig blocks{64, 4, 256, 2, true, true, 15, 4};
  // Number of encoder layers feeding the conditioning sum.
  int encoder_layers = 4;
  // Condition-token vocabulary; row n_phones of the table is the null token.
  int n_phones = 12;
  double sigma_min = 1e-5;

  void validate() const;
};

template <typename T>
struct FlowSample {
  Tensor<T> x0;
  Tensor<T> x1;
  double t = 0.0;
  Tensor<T> phi;
  Tensor<T> u;
};

// phi_t = (1 - (1 - sigma_min) t) x0 + t x1, u_t = x1 - (1 - sigma_min) x0.
template <typename T>
FlowSample<T> ot_path(const Tensor<T>& x0, const Tensor<T>& x1, double t, double sigma_min);

// [sin(f_j t) | cos(f_j t)] with d/2 frequencies spaced geometrically over
// [1, 1e4]. Returned as a [1, d] row.
template <typename T>
Tensor<T> timestep_embedding(double t, int d);

// Parameters:
//   decoder.time.{in,out}.{w,b}  decoder.layer*  decoder.skip*  decoder.final_ln
//   decoder.out.{w,b}            proj.input.w [d, d_x]  proj.layer{i}.w [d, d]
//   cond.phone_emb [n_phones + 1, d]  cond.null_z [d]
template <typename T>
void init_decoder(ParameterStore<T>& store, const DecoderConfig& cfg, Rng& rng);

// z = sum_i W_i z^(i) over every encoder layer output.
template <typename T>
NodeId condition_from_layers(Binder<T>& bind, const DecoderConfig& cfg,
                             std::span<const NodeId> layers);

// Learned embeddings of aligned condition tokens; id n_phones is the null
// token used for dropout and unconditional queries.
template <typename T>
NodeId phone_embedding(Binder<T>& bind, const DecoderConfig& cfg,
                       std::span<const std::int64_t> phones);

// Rows inside `mask` replaced by cond.null_z.
template <typename T>
NodeId null_condition(Binder<T>& bind, NodeId z, const MaskSpec& mask);

// Predicted field [L, d_x] for phi [L, d_x] at time t given the additive
// conditioning `cond` [L, d]. The time token is prepended at position 0 and
// its output discarded.
template <typename T>
NodeId decoder_forward(Binder<T>& bind, const DecoderConfig& cfg, NodeId phi, double t,
                       NodeId cond);

// Squared error to the target field, summed over masked frames and feature
// dims and divided by `normalizer` (0 means |M| * d_x).
template <typename T>
NodeId cfm_loss(Graph<T>& graph, NodeId v_pred, const Tensor<T>& u, const MaskSpec& mask,
                double normalizer = 0.0);

enum class TimeSampling { kUniform, kLogitNormal };

// Uniform on (0, 1), or sigmoid of a standard normal draw.
double sample_time(TimeSampling mode, Rng& rng);

}  // namespace duet
