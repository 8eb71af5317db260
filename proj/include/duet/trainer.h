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
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "duet/checkpoint.h"
#include "duet/config.h"
#include "duet/data.h"
#include "duet/encoder.h"
#include "duet/quantizer.h"

namespace duet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Phase { kPretrain, kTts, kTokenize };

const char* phase_name(Phase p);
Phase phase_from_name(const std::string& name);

// Linear warmup from 0 to peak over `warmup` steps, then cosine decay to 0
// at `total`.
double lr_at(std::int64_t step, std::int64_t total, std::int64_t warmup, double peak);

// Bias-corrected Adam for one array; `step` counts from 1.
template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::int64_t step, double lr, double beta1, double beta2, double eps);

template <typename T>
using GradMap = std::map<std::string, Tensor<T>, std::less<>>;

template <typename T>
double global_norm(const GradMap<T>& grads);

// Scales every gradient by min(1, max_norm / norm) and returns the norm
// before clipping.
template <typename T>
double clip_gradients(GradMap<T>& grads, double max_norm);

template <typename T>
struct TrainState {
  ParameterStore<T> params;
  ParameterStore<T> teacher;
  ParameterStore<T> adam_m;
  ParameterStore<T> adam_v;
  std::vector<Codebook> codebooks;
  std::optional<Quantizer> quantizer;
  NormStats norm;
  // Optimizer steps taken in the current phase.
  std::int64_t step = 0;
  Rng rng;
};

// Fresh model, teacher copy, random codebooks and zero moments. Parameters
// and codebooks are drawn from a stream derived from the seed; the state's
// own generator drives data, masks, noise and time draws.
template <typename T>
TrainState<T> init_state(const RunConfig& cfg);

// Clears the optimizer for a new phase; the rest of the state is kept.
template <typename T>
void reset_optimizer(TrainState<T>& state);

struct StepMetrics {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_encoder = 0.0;
  double loss_decoder = 0.0;
  double grad_norm = 0.0;
  double teacher_decay = 0.0;
  std::vector<double> perplexity;
  int dropped = 0;
};

// Which parameters receive gradients in a phase.
std::function<bool(std::string_view)> trainable_predicate(Phase phase, const RunConfig& cfg);

// One optimizer step. Pretraining: teacher forward, student forward,
// decoder forward, L_enc + lambda L_dec, backward, clip, Adam, teacher EMA,
// codebook update. Fine-tuning uses the decoder loss only. Batch items are
// processed one at a time at their own length; per-item losses are divided
// by batch-wide masked-frame counts so the sum is the batch mean.
// Throws TrainingError on a non-finite loss or gradient.
template <typename T>
StepMetrics train_step(TrainState<T>& state, const Corpus& corpus, const RunConfig& cfg, Phase phase);

// Encoder layers for every utterance, stacked over frames.
template <typename T>
std::vector<Tensor<T>> stacked_layers(const ParameterStore<T>& params, const EncoderConfig& cfg,
                                      const Corpus& corpus);

// Fits the tokenizer on `corpus` with the frozen encoder. The semantic layer
// is cfg.tokenize.semantic_layer, or the layer with the highest phone MI.
template <typename T>
Quantizer fit_quantizer(const ParameterStore<T>& params, const RunConfig& cfg,
                        const Corpus& corpus, Rng& rng);

// CSV metrics: step,lr,loss_total,loss_encoder,loss_decoder,grad_norm,
// teacher_decay,perplexity_<k>... with one perplexity column per target
// layer.
std::string metrics_header(int top_k);
std::string metrics_row(const StepMetrics& m);

// Runs steps until state.step reaches `total`, invoking callbacks after each.
template <typename T>
void train_loop(TrainState<T>& state, const Corpus& corpus, const RunConfig& cfg, Phase phase,
                std::int64_t total, const std::function<void(const StepMetrics&)>& on_step);

template <typename T>
Checkpoint to_checkpoint(const TrainState<T>& state, const RunConfig& cfg, Phase phase);
// Restores a state written by to_checkpoint. The architecture hash must
// match cfg.
template <typename T>
TrainState<T> from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg);
Phase checkpoint_phase(const Checkpoint& ckpt);
RunConfig checkpoint_config(const Checkpoint& ckpt);

}  // namespace duet
