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

#include <string_view>
#include <vector>

#include "duet/common.h"
#include "duet/graph.h"
#include "duet/params.h"

namespace duet {

struct BlockConfig {
  int d = 64;
  int heads = 4;
  int ffn = 256;
  int layers = 4;
  bool use_alibi = true;
  bool use_unet_skips = false;
  // Convolutional positional embedding; only the encoder uses it.
  int conv_kernel = 15;
  int conv_groups = 4;

  void validate() const;
};

// Per-head slopes 2^(-8h/H) for h = 1..H.
std::vector<double> alibi_slopes(int heads);

// Symmetric distance penalty -slope * |i - j| for a sequence of `length`.
template <typename T>
Tensor<T> alibi_bias(double slope, std::int64_t length);

// Parameter layout under `prefix`:
//   layer{i}.ln1.{g,b} layer{i}.attn.{q,k,v,o}.{w,b}
//   layer{i}.ln2.{g,b} layer{i}.ffn.{in,out}.{w,b}
//   skip{i}.w (U-Net layers only)  final_ln.{g,b}
// Linear weights are stored [out, in].
template <typename T>
void init_stack(ParameterStore<T>& store, std::string_view prefix,
                const BlockConfig& cfg, Rng& rng);

// Adds `{prefix}pos_conv.w` of shape [d, d / groups, kernel].
template <typename T>
void init_conv_positional(ParameterStore<T>& store, std::string_view prefix,
                          const BlockConfig& cfg, Rng& rng);

// x W^T + b for weights stored under `{name}.w` / `{name}.b`. The bias is
// optional.
template <typename T>
NodeId linear(Binder<T>& bind, std::string_view name, NodeId x);

// Runs the pre-norm stack over x [L, d] and returns the output of every
// layer. The last entry has the final layer norm applied and is the stack's
// representation z.
template <typename T>
std::vector<NodeId> encode_stack(Binder<T>& bind, std::string_view prefix,
                                 const BlockConfig& cfg, NodeId x);

// GELU(grouped conv(x)); callers add the result to x.
template <typename T>
NodeId conv_positional(Binder<T>& bind, std::string_view prefix,
                       const BlockConfig& cfg, NodeId x);

// Concatenates [early | late] along features and projects back to d with
// w_skip of shape [d, 2d].
template <typename T>
NodeId unet_combine(Graph<T>& graph, NodeId early, NodeId late, NodeId w_skip);

}  // namespace duet
