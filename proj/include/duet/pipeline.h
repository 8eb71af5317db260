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

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "duet/config.h"
#include "duet/data.h"
#include "duet/quantizer.h"
#include "duet/sampler.h"
#include "duet/trainer.h"

namespace duet {

// Training corpus for a run: data.path when set, otherwise generated from
// the corpus parameters and cfg.seed. Frames are normalized with `stats`
// when given, else with statistics computed here and stored in *stats_out.
Corpus prepare_corpus(const RunConfig& cfg, const NormStats* stats, NormStats* stats_out);

// Corpus file at `path` rescaled with checkpoint statistics.
Corpus load_normalized(const std::filesystem::path& path, const NormStats& stats);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::vector<StepMetrics> trace;
};

// Writes <out_dir>/config.json, <out_dir>/metrics.csv and
// <out_dir>/checkpoint.duet. With `resume`, training continues from that
// checkpoint and metrics.csv holds the remaining steps only.
TrainResult cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& resume, std::ostream& log);

// Fine-tunes `base` in cfg.finetune.mode. The base must be a pretraining
// checkpoint or one from the same mode.
TrainResult cmd_finetune(const RunConfig& cfg, const std::filesystem::path& base,
                         const std::filesystem::path& out_dir, std::ostream& log);

struct SampleReport {
  int samples = 0;
  int nfe = 0;
  int decoder_passes = 0;
};

// Generates cfg.sample.count utterances into a corpus file. The condition
// file is a corpus (tts and pretraining checkpoints) or a token file
// (tokenize checkpoints); it is required except for pretraining checkpoints.
SampleReport cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::optional<std::filesystem::path>& condition,
                        const std::filesystem::path& out, std::ostream& log);

struct TokenizeReport {
  int semantic_layer = 0;
  std::vector<int> codebook_sizes;
  double frame_rate = 0.0;
  double bitrate = 0.0;
  std::int64_t frames = 0;
};

// Tokenizes a corpus (data.path or the generated corpus when `corpus` is
// empty). Uses the checkpoint's quantizer when it has one, otherwise fits
// one with the tokenize settings.
TokenizeReport cmd_tokenize(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                            const std::optional<std::filesystem::path>& corpus,
                            const std::filesystem::path& out, std::ostream& log);

// Per-layer MI table. Writes CSV to `out` and a readable table to `log`.
MIReport cmd_analyze(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                     const std::optional<std::filesystem::path>& corpus,
                     const std::filesystem::path& out, std::ostream& log);

void cmd_gen_corpus(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

std::string mi_report_csv(const MIReport& report);

// Masked resynthesis error: each utterance is masked with the pretraining
// mask, its masked frames regenerated from the encoder features, and the
// squared error on those frames averaged and divided by the per-dimension
// data variance.
template <typename T>
double resynthesis_mse(const ParameterStore<T>& params, const RunConfig& cfg, const Corpus& corpus,
                       const SolverConfig& solver, Rng& rng);

}  // namespace duet
