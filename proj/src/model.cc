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

#include "duet/model.h"

namespace duet {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.input_dim != decoder.input_dim) {
    throw ConfigError("model: encoder and decoder input_dim differ");
  }
  if (encoder.blocks.d != decoder.blocks.d) {
    throw ConfigError("model: encoder and decoder hidden sizes differ");
  }
  if (decoder.encoder_layers != encoder.blocks.layers) {
    throw ConfigError("model: decoder.encoder_layers must equal the encoder depth");
  }
  if (!(lambda >= 0.0)) throw ConfigError("model: lambda must be >= 0");
}

template <typename T>
ParameterStore<T> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterStore<T> store;
  init_encoder(store, cfg.encoder, rng);
  init_decoder(store, cfg.decoder, rng);
  return store;
}

template <typename T>
ParameterStore<T> make_teacher(const ParameterStore<T>& params) {
  return params.subset("encoder.");
}

template ParameterStore<float> init_model<float>(const ModelConfig&, Rng&);
template ParameterStore<double> init_model<double>(const ModelConfig&, Rng&);
template ParameterStore<float> make_teacher<float>(const ParameterStore<float>&);
template ParameterStore<double> make_teacher<double>(const ParameterStore<double>&);

}  // namespace duet
