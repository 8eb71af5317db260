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

#include "duet/decoder.h"
#include "duet/encoder.h"
#include "duet/params.h"
#include "duet/rng.h"

namespace duet {

// Encoder and decoder sharing one parameter store.
struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  // Weight of the decoder loss in L_enc + lambda * L_dec.
  double lambda = 0.25;

  void validate() const;
};

template <typename T>
ParameterStore<T> init_model(const ModelConfig& cfg, Rng& rng);

// Teacher weights: a copy of the student's "encoder." entries.
template <typename T>
ParameterStore<T> make_teacher(const ParameterStore<T>& params);

}  // namespace duet
