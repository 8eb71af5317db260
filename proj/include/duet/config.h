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
#include <filesystem>
#include <string>
#include <vector>

#include "duet/data.h"
#include "duet/decoder.h"
#include "duet/model.h"
#include "duet/sampler.h"

namespace duet {

struct DataConfig {
  CorpusParams corpus;
  // Corpus file to train on; empty means generate from `corpus`.
  std::string path;
  std::int64_t max_frames = 128;
  int batch_size = 8;
  double mask_prob = 0.08;
  int mask_span = 10;
};

struct TrainConfig {
  std::int64_t total_steps = 2000;
  std::int64_t warmup_steps = 100;
  double peak_lr = 2e-3;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double teacher_start = 0.9997;
  double teacher_end = 1.0;
  // Teacher ramp length as a fraction of total_steps.
  double teacher_ramp = 2.0 / 3.0;
  // Write a checkpoint every N steps (0: only at the end).
  std::int64_t checkpoint_every = 0;
};

enum class FinetuneMode { kTts, kTokenize };

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::kTts;
  std::int64_t total_steps = 500;
  std::int64_t warmup_steps = 50;
  // Negative means the mode default: 1e-5 (tts) or 1e-4 (tokenize).
  double lr = -1.0;
  // -1 means the mode default: trainable for tts, frozen for tokenize.
  int train_encoder = -1;
  double condition_dropout = 0.2;
  double prompt_min = 0.7;
  double prompt_max = 1.0;
  TimeSampling time_sampling = TimeSampling::kLogitNormal;
  // Tokenize mode: condition on quantized (true) or raw (false) features.
  bool quantize = true;

  double resolved_lr() const;
  bool resolved_train_encoder() const;
};

struct TokenizeConfig {
  int k = 64;
  bool residual = false;
  int residual_k = 64;
  double frame_rate = 50.0;
  int max_iter = 100;
  // -1 selects the layer with the highest phone MI.
  int semantic_layer = -1;
};

struct AnalyzeConfig {
  int k = 32;
};

struct SampleConfig {
  double step = 0.0625;
  double guidance = 1.9;
  GuidanceForm form = GuidanceForm::kInterpolate;
  int count = 4;
  // Fraction of each condition utterance kept as the audio prompt.
  double prompt_fraction = 0.3;
};

enum class Precision { kFloat32, kFloat64 };

struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  TokenizeConfig tokenize;
  AnalyzeConfig analyze;
  SampleConfig sample;

  // Cross-section checks; throws ConfigError.
  void validate() const;
  std::int64_t teacher_ramp_steps() const;
};

// Default configuration with derived fields (decoder input size, encoder
// depth, phone vocabulary) tied to the data section.
RunConfig default_config();

// JSON text of every field.
std::string config_to_json(const RunConfig& cfg);
// Parses JSON on top of the defaults. Unknown keys, wrong types and invalid
// values throw ConfigError naming the key path.
RunConfig config_from_json(const std::string& text);
// Applies "a.b.c=value" overrides; value is parsed as JSON, falling back to
// a plain string.
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides);
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});

// Hash of the architecture fields only (model, input size, precision).
std::uint64_t architecture_hash(const RunConfig& cfg);

}  // namespace duet
