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

#include "duet/graph.h"
#include "duet/params.h"
#include "duet/rng.h"
#include "duet/transformer.h"

namespace duet {

// Frames selected for masking: the union of spans [start, start + span)
// clipped to the sequence length.
struct MaskSpec {
  std::int64_t length = 0;
  double start_prob = 0.0;
  int span = 1;
  std::vector<std::int64_t> starts;
  // indicator[i] != 0 iff frame i is masked.
  std::vector<std::uint8_t> indicator;
  // True when sampling produced no span and one was placed at random.
  bool forced = false;

  static MaskSpec from_indices(std::int64_t length, std::span<const std::int64_t> indices);
  static MaskSpec none(std::int64_t length);
  static MaskSpec all(std::int64_t length);

  std::int64_t count() const;
  std::vector<std::int64_t> indices() const;
  bool contains(std::int64_t i) const { return indicator[static_cast<std::size_t>(i)] != 0; }
};

// Each frame starts a span independently with probability p in (0, 1]. An
// empty draw is replaced by a single span at a uniformly random start so
// every training item has at least one masked frame.
MaskSpec sample_mask(std::int64_t length, double p, int span, Rng& rng);

// Rows in the mask are replaced by the embedding; all others are copied.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const MaskSpec& mask,
                     std::span<const T> mask_embedding);

template <typename T>
NodeId apply_mask(Graph<T>& graph, NodeId x, const MaskSpec& mask, NodeId mask_embedding);

// Online-clustered codebook. Sums and sizes are kept in double precision
// regardless of model precision so long decays cannot underflow to 0/0.
class Codebook {
 public:
  Codebook(Tensor<double> sums, std::vector<double> counts);
  // Sums drawn from N(0, 1/dim) per coordinate, sizes set to 1.
  static Codebook random(int size, int dim, Rng& rng);

  int size() const { return static_cast<int>(counts_.size()); }
  int dim() const { return static_cast<int>(sums_.dim(1)); }
  const Tensor<double>& sums() const { return sums_; }
  const std::vector<double>& counts() const { return counts_; }
  const Tensor<double>& codewords() const { return codewords_; }

  // Index of the closest codeword in Euclidean distance; ties go to the
  // lowest index.
  template <typename T>
  std::int64_t nearest(std::span<const T> z) const;

  // s_v <- g s_v + (1-g) sum z, n_v <- g n_v + (1-g) count, e_v <- s_v / n_v
  // over rows of `points` grouped by `labels`. Sizes are floored at DBL_MIN;
  // an unassigned codeword whose size has decayed below 1e-200 keeps its
  // value instead of dividing two subnormals.
  template <typename T>
  void update(const Tensor<T>& points, std::span<const std::int64_t> labels, double decay);

 private:
  Tensor<double> sums_;
  std::vector<double> counts_;
  Tensor<double> codewords_;
};

struct EncoderConfig {
  int input_dim = 8;
  BlockConfig blocks;
  int codebook_size = 32;
  int top_k = 2;
  double codebook_decay = 0.9;

  void validate() const;
  // Teacher layers used as targets, shallowest first.
  std::vector<int> target_layers() const;
};

// Student parameters under "encoder." and prediction heads under
// "heads.{k}." for k in [0, top_k).
template <typename T>
void init_encoder(ParameterStore<T>& store, const EncoderConfig& cfg, Rng& rng);

// Layer outputs for input frames x [L, input_dim]. With a mask, masked rows
// are replaced by the learned mask embedding before projection.
template <typename T>
std::vector<NodeId> encoder_forward(Binder<T>& bind, const EncoderConfig& cfg, NodeId x,
                                    const MaskSpec* mask);

// Every layer output for unmasked input, without gradient recording.
template <typename T>
std::vector<Tensor<T>> encoder_layers(const ParameterStore<T>& params, const EncoderConfig& cfg,
                                      const Tensor<T>& x);

template <typename T>
struct TeacherTargets {
  // Per target layer: teacher outputs [L, d] and nearest-codeword labels.
  std::vector<Tensor<T>> outputs;
  std::vector<std::vector<std::int64_t>> labels;
};

// Teacher forward on the unmasked input without gradient recording.
template <typename T>
TeacherTargets<T> teacher_labels(const ParameterStore<T>& teacher, const EncoderConfig& cfg,
                                 const Tensor<T>& x, std::span<const Codebook> codebooks);

// -1/normalizer * sum over masked frames and target layers of
// log p_k(label | z_i). A normalizer of 0 means |K| * |M|, the per-sequence
// mean; the trainer passes the batch-wide count instead.
template <typename T>
NodeId encoder_loss(Binder<T>& bind, const EncoderConfig& cfg, NodeId z,
                    const std::vector<std::vector<std::int64_t>>& labels, const MaskSpec& mask,
                    double normalizer = 0.0);

// Teacher decay ramps linearly from start to end over ramp_steps, then holds.
struct TeacherSchedule {
  double start = 0.9997;
  double end = 1.0;
  std::int64_t ramp_steps = 1;

  double decay_at(std::int64_t step) const;
};

// teacher <- decay * teacher + (1 - decay) * student for every teacher entry.
template <typename T>
void ema_update(ParameterStore<T>& teacher, const ParameterStore<T>& student, double decay);

}  // namespace duet
