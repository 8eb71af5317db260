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
#include <vector>

#include "duet/model.h"

namespace duet {

enum class GuidanceForm {
  // v_u + alpha (v_c - v_u)
  kInterpolate,
  // (1 + alpha) v_c - alpha v_u
  kExtrapolate,
};

struct SolverConfig {
  double step = 0.0625;
  double guidance = 1.0;
  GuidanceForm form = GuidanceForm::kInterpolate;

  void validate() const;
  int steps() const;
  // Field evaluations per sample: two per midpoint step. The unconditional
  // branch of guidance shares each evaluation (it is batched with the
  // conditional one) and is not counted separately.
  int nfe() const { return 2 * steps(); }
  // Whether the unconditional branch changes the guided field.
  bool guided() const;
};

template <typename T>
using FieldFn = std::function<Tensor<T>(const Tensor<T>& x, double t)>;

template <typename T>
struct SolveResult {
  Tensor<T> x;
  int evaluations = 0;
};

// x <- x + h v(x + h/2 v(x, t), t + h/2) from t = 0 to 1.
template <typename T>
SolveResult<T> midpoint_solve(const FieldFn<T>& field, const Tensor<T>& x0, double h);

template <typename T>
Tensor<T> cfg_field(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double alpha,
                    GuidanceForm form = GuidanceForm::kInterpolate);

// One contiguous region covering round(f L) frames, f ~ U(lo, hi), at a
// uniformly random offset. At least one frame is always covered.
MaskSpec prompt_mask(std::int64_t length, double lo, double hi, Rng& rng);

template <typename T>
struct ConditionSet {
  // Aligned condition tokens, one per frame; empty means the null token.
  std::vector<std::int64_t> phones;
  // Audio prompt [L, d_x]. Frames inside `region` are hidden from the
  // encoder; when `null_region` is set their representation is replaced by
  // the null embedding. An empty prompt means no audio condition.
  Tensor<T> prompt;
  MaskSpec region;
  bool null_region = true;
  // Precomputed representation [L, d] used instead of the prompt path,
  // e.g. a quantized condition.
  Tensor<T> z;
  // Null every condition (dropout or the unconditional branch).
  bool dropped = false;
};

// Decoder conditioning [L, d] for a condition set: representation term plus
// condition-token embeddings, all null when dropped.
template <typename T>
NodeId build_condition(Binder<T>& bind, const ModelConfig& cfg, const ConditionSet<T>& cond,
                       std::int64_t length);

template <typename T>
struct GenerateResult {
  Tensor<T> x;
  int nfe = 0;
  int decoder_passes = 0;
};

// Draws x0 ~ N(0, I) per frame and integrates the guided field.
template <typename T>
GenerateResult<T> generate(const ParameterStore<T>& params, const ModelConfig& cfg,
                           const ConditionSet<T>& cond, const SolverConfig& solver,
                           std::int64_t length, Rng& rng);

}  // namespace duet
