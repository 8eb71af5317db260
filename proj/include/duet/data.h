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

#include "duet/encoder.h"
#include "duet/rng.h"
#include "duet/tensor.h"

namespace duet {

struct CorpusParams {
  int input_dim = 8;
  int n_phones = 12;
  int n_speakers = 6;
  int n_utterances = 256;
  int min_length = 40;
  int max_length = 120;
  double mean_segment = 8.0;
  double prototype_scale = 1.0;
  double speaker_scale = 0.7;
  double noise_scale = 0.2;

  void validate() const;
};

struct Utterance {
  Tensor<float> frames;  // [L, input_dim]
  std::vector<std::int64_t> phones;
  std::int64_t speaker = 0;

  std::int64_t length() const { return frames.rank() == 2 ? frames.dim(0) : 0; }
};

struct Corpus {
  int input_dim = 0;
  int n_phones = 0;
  int n_speakers = 0;
  bool has_labels = true;
  std::vector<Utterance> utterances;

  std::int64_t total_frames() const;
  // All frames stacked [N, input_dim] with per-frame phone and speaker ids.
  Tensor<float> stacked() const;
  std::vector<std::int64_t> frame_phones() const;
  std::vector<std::int64_t> frame_speakers() const;
};

// Utterances are sequences of segments with geometric lengths. A segment's
// frames are its phone prototype plus the utterance's speaker offset plus
// Gaussian noise. Prototypes and offsets are drawn first, then utterances in
// order.
Corpus generate_corpus(const CorpusParams& params, Rng& rng);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  // Dimensions whose variance was floored at 1e-8.
  std::vector<int> floored;
};

NormStats compute_stats(const Corpus& corpus);
// Rescales every frame to zero mean and unit variance per dimension.
NormStats normalize(Corpus& corpus);
void apply_stats(Corpus& corpus, const NormStats& stats);
template <typename T>
void denormalize(Tensor<T>& frames, const NormStats& stats);

struct BatchItem {
  std::int64_t source = 0;
  std::int64_t offset = 0;
  Tensor<float> frames;  // valid frames only, [L_b, input_dim]
  std::vector<std::int64_t> phones;
  std::int64_t speaker = 0;
  MaskSpec mask;  // over the valid frames; empty when masking is off
};

struct Batch {
  std::int64_t length = 0;
  Tensor<float> features;                  // [B, length, input_dim], zero padded
  std::vector<std::vector<std::uint8_t>> pad;  // pad[b][i] != 0 for padding
  std::vector<BatchItem> items;

  std::int64_t masked_frames() const;
};

// Draws B utterances (distinct when B <= corpus size), crops those longer
// than max_frames at a uniform offset, pads the rest and samples a mask per
// item over its valid frames. mask_prob <= 0 disables masking.
Batch make_batch(const Corpus& corpus, int batch_size, std::int64_t max_frames, double mask_prob,
                 int mask_span, Rng& rng);

// Binary corpus file, little-endian:
//   "DUETCORP" u32 version u32 input_dim u32 n_utterances u32 n_phones
//   u32 n_speakers u32 flags(bit 0: labels present)
//   per utterance: u32 L, f32[L * input_dim] row-major,
//                  [u16[L] phones, u16 speaker]
std::string serialize_corpus(const Corpus& corpus);
Corpus deserialize_corpus(std::string_view data);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& path);

}  // namespace duet
