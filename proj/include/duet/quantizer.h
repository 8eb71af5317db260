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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duet/decoder.h"
#include "duet/params.h"
#include "duet/rng.h"
#include "duet/tensor.h"

namespace duet {

struct KMeansModel {
  Tensor<double> centroids;
  int layer = -1;
  int iterations = 0;
  // Inertia after each assignment pass.
  std::vector<double> inertia;

  int k() const { return static_cast<int>(centroids.dim(0)); }
  int dim() const { return static_cast<int>(centroids.dim(1)); }
  // Nearest centroid; ties go to the lowest index.
  template <typename T>
  std::int64_t assign(std::span<const T> point) const;
  template <typename T>
  std::vector<std::int64_t> assign_rows(const Tensor<T>& points) const;
};

// Lloyd's algorithm from a k-means++ start. Stops when assignments repeat
// or after max_iter passes. A cluster that empties is re-seeded with the
// point farthest from its centroid.
template <typename T>
KMeansModel kmeans_fit(const Tensor<T>& points, int k, int max_iter, Rng& rng);

// Semantic codebook over one encoder layer plus an optional residual
// codebook over the projected sum of the remaining layers.
struct Quantizer {
  int semantic_layer = 0;
  KMeansModel semantic;
  std::optional<KMeansModel> residual;
  double frame_rate = 50.0;

  std::vector<int> codebook_sizes() const;
  int streams() const { return residual ? 2 : 1; }
};

// sum_{j != i} W_j z^(j) for each frame.
template <typename T>
Tensor<T> residual_input(const std::vector<Tensor<T>>& layers, const ParameterStore<T>& params,
                         int semantic_layer);

// Token streams for one utterance: streams[0] semantic, streams[1] residual.
template <typename T>
std::vector<std::vector<std::int64_t>> quantize_tokens(const std::vector<Tensor<T>>& layers,
                                                       const ParameterStore<T>& params,
                                                       const Quantizer& q);

// W_i Q_i[s] + Q_res[r] as a graph node; W_i is bound through `bind`.
template <typename T>
NodeId dequantize(Binder<T>& bind, const Quantizer& q,
                  const std::vector<std::vector<std::int64_t>>& tokens);

// z_bar = W_i nearest(Q_i, z^(i)) + nearest(Q_res, sum_{j != i} W_j z^(j)).
template <typename T>
Tensor<T> quantize_condition(const std::vector<Tensor<T>>& layers,
                             const ParameterStore<T>& params, const Quantizer& q);

// Bits per token for a codebook of size k: ceil(log2 k).
int code_bits(std::int64_t k);
// sum_c ceil(log2 k_c) * frame_rate.
double bitrate(std::span<const int> codebook_sizes, double frame_rate);

// Empirical mutual information in bits; cells with zero count are skipped.
double mutual_information(std::span<const std::int64_t> a, std::span<const std::int64_t> b);
double entropy(std::span<const std::int64_t> symbols);

struct LayerMI {
  // -1 for the raw input features.
  int layer = -1;
  double phone_mi = 0.0;
  double speaker_mi = 0.0;
  double unit_entropy = 0.0;
};

struct MIReport {
  LayerMI raw;
  std::vector<LayerMI> layers;
  double phone_entropy = 0.0;
  double speaker_entropy = 0.0;
};

// Quantizes each representation with k-means (k clusters) and measures MI
// of the units against per-frame phone and speaker labels.
template <typename T>
MIReport analyze_layers(const Tensor<T>& raw, const std::vector<Tensor<T>>& layers,
                        std::span<const std::int64_t> phones,
                        std::span<const std::int64_t> speakers, int k, Rng& rng);

// Layer whose units carry the most phone information; ties go shallower.
int select_semantic_layer(const MIReport& report);

// Text token file:
//   duet-tokens 1
//   frame_rate <hz>
//   codebooks <k_0> ... <k_{S-1}>
//   utterances <n>
// then one line per utterance with frame-major tokens (S per frame).
struct TokenFile {
  double frame_rate = 50.0;
  std::vector<int> codebook_sizes;
  // utterances[u][s][i]: stream s, frame i.
  std::vector<std::vector<std::vector<std::int64_t>>> utterances;
};

void write_tokens(std::ostream& out, const TokenFile& file);
TokenFile read_tokens(std::istream& in);

}  // namespace duet
