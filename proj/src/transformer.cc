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

#include "duet/transformer.h"

#include <cmath>
#include <string>

namespace duet {

void BlockConfig::validate() const {
  if (d <= 0 || heads <= 0 || layers <= 0) {
    throw ConfigError("block config: d, heads and layers must be positive");
  }
  if (d % heads != 0) {
    throw ConfigError("block config: d=" + std::to_string(d) +
                      " not divisible by heads=" + std::to_string(heads));
  }
  if (ffn < d) throw ConfigError("block config: ffn must be >= d");
  if (use_unet_skips && layers % 2 != 0) {
    throw ConfigError("block config: U-Net skips need an even layer count");
  }
  if (conv_kernel <= 0 || conv_kernel % 2 == 0) {
    throw ConfigError("block config: conv kernel must be odd");
  }
  if (conv_groups <= 0 || d % conv_groups != 0) {
    throw ConfigError("block config: conv groups must divide d");
  }
}

std::vector<double> alibi_slopes(int heads) {
  std::vector<double> slopes;
  slopes.reserve(static_cast<std::size_t>(heads));
  for (int h = 1; h <= heads; ++h) {
    slopes.push_back(std::exp2(-8.0 * h / heads));
  }
  return slopes;
}

template <typename T>
Tensor<T> alibi_bias(double slope, std::int64_t length) {
  Tensor<T> bias(Shape{length, length});
  for (std::int64_t i = 0; i < length; ++i) {
    for (std::int64_t j = 0; j < length; ++j) {
      bias(i, j) = static_cast<T>(-slope * static_cast<double>(std::llabs(i - j)));
    }
  }
  return bias;
}

namespace {

std::string join(std::string_view prefix, std::string_view name) {
  std::string out(prefix);
  out += name;
  return out;
}

template <typename T>
void add_linear(ParameterStore<T>& store, const std::string& name, int out, int in,
                double stddev, Rng& rng) {
  store.add(name + ".w", normal_tensor<T>(Shape{out, in}, stddev, rng));
  store.add(name + ".b", Tensor<T>(Shape{out}));
}

template <typename T>
void add_norm(ParameterStore<T>& store, const std::string& name, int d) {
  store.add(name + ".g", Tensor<T>(Shape{d}, T{1}));
  store.add(name + ".b", Tensor<T>(Shape{d}));
}

template <typename T>
NodeId layer_norm(Binder<T>& bind, const std::string& name, NodeId x) {
  return bind.graph().layer_norm(x, bind(name + ".g"), bind(name + ".b"));
}

template <typename T>
NodeId self_attention(Binder<T>& bind, const std::string& name, const BlockConfig& cfg,
                      NodeId x, const std::vector<NodeId>& biases) {
  auto& g = bind.graph();
  const NodeId q = linear(bind, name + ".q", x);
  const NodeId k = linear(bind, name + ".k", x);
  const NodeId v = linear(bind, name + ".v", x);
  const int dh = cfg.d / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<NodeId> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const NodeId qh = g.slice(q, 1, h * dh, (h + 1) * dh);
    const NodeId kh = g.slice(k, 1, h * dh, (h + 1) * dh);
    const NodeId vh = g.slice(v, 1, h * dh, (h + 1) * dh);
    NodeId scores = g.scale(g.matmul(qh, kh, false, true), scale);
    if (!biases.empty()) scores = g.add(scores, biases[static_cast<std::size_t>(h)]);
    heads.push_back(g.matmul(g.softmax(scores), vh));
  }
  return linear(bind, name + ".o", g.concat(heads, 1));
}

}  // namespace

template <typename T>
void init_stack(ParameterStore<T>& store, std::string_view prefix, const BlockConfig& cfg,
                Rng& rng) {
  cfg.validate();
  const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double out_std = in_std / std::sqrt(2.0 * cfg.layers);
  const double ffn_out_std = 1.0 / std::sqrt(static_cast<double>(cfg.ffn)) /
                             std::sqrt(2.0 * cfg.layers);
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string layer = join(prefix, "layer" + std::to_string(i));
    add_norm(store, layer + ".ln1", cfg.d);
    add_linear(store, layer + ".attn.q", cfg.d, cfg.d, in_std, rng);
    add_linear(store, layer + ".attn.k", cfg.d, cfg.d, in_std, rng);
    add_linear(store, layer + ".attn.v", cfg.d, cfg.d, in_std, rng);
    add_linear(store, layer + ".attn.o", cfg.d, cfg.d, out_std, rng);
    add_norm(store, layer + ".ln2", cfg.d);
    add_linear(store, layer + ".ffn.in", cfg.ffn, cfg.d, in_std, rng);
    add_linear(store, layer + ".ffn.out", cfg.d, cfg.ffn, ffn_out_std, rng);
    if (cfg.use_unet_skips && i >= cfg.layers / 2) {
      store.add(join(prefix, "skip" + std::to_string(i) + ".w"),
                normal_tensor<T>(Shape{cfg.d, 2 * cfg.d},
                                 1.0 / std::sqrt(2.0 * cfg.d), rng));
    }
  }
  add_norm(store, join(prefix, "final_ln"), cfg.d);
}

template <typename T>
void init_conv_positional(ParameterStore<T>& store, std::string_view prefix,
                          const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const int per_group = cfg.d / cfg.conv_groups;
  store.add(join(prefix, "pos_conv.w"),
            normal_tensor<T>(Shape{cfg.d, per_group, cfg.conv_kernel},
                             1.0 / std::sqrt(static_cast<double>(per_group * cfg.conv_kernel)),
                             rng));
}

template <typename T>
NodeId linear(Binder<T>& bind, std::string_view name, NodeId x) {
  auto& g = bind.graph();
  const std::string base(name);
  NodeId y = g.matmul(x, bind(base + ".w"), false, true);
  if (bind.has(base + ".b")) y = g.add(y, bind(base + ".b"));
  return y;
}

template <typename T>
std::vector<NodeId> encode_stack(Binder<T>& bind, std::string_view prefix,
                                 const BlockConfig& cfg, NodeId x) {
  cfg.validate();
  auto& g = bind.graph();
  const Shape s = g.shape(x);
  if (s.size() != 2 || s[1] != cfg.d) {
    throw ConfigError("encode_stack: input " + shape_string(s) + " does not match d=" +
                      std::to_string(cfg.d));
  }
  if (s[0] < 1) throw ConfigError("encode_stack: empty sequence");
  std::vector<NodeId> biases;
  if (cfg.use_alibi) {
    for (double slope : alibi_slopes(cfg.heads)) {
      biases.push_back(g.constant(alibi_bias<T>(slope, s[0])));
    }
  }
  std::vector<NodeId> outputs;
  std::vector<NodeId> skips;
  NodeId h = x;
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string layer = join(prefix, "layer" + std::to_string(i));
    if (cfg.use_unet_skips) {
      if (i < cfg.layers / 2) {
        skips.push_back(h);
      } else {
        const NodeId early = skips[static_cast<std::size_t>(cfg.layers - 1 - i)];
        h = unet_combine(g, early, h, bind(join(prefix, "skip" + std::to_string(i) + ".w")));
      }
    }
    const NodeId attn = self_attention(bind, layer + ".attn", cfg,
                                       layer_norm(bind, layer + ".ln1", h), biases);
    h = g.add(h, attn);
    const NodeId hidden = g.gelu(linear(bind, layer + ".ffn.in", layer_norm(bind, layer + ".ln2", h)));
    h = g.add(h, linear(bind, layer + ".ffn.out", hidden));
    outputs.push_back(h);
  }
  outputs.back() = layer_norm(bind, join(prefix, "final_ln"), outputs.back());
  return outputs;
}

template <typename T>
NodeId conv_positional(Binder<T>& bind, std::string_view prefix, const BlockConfig& cfg,
                       NodeId x) {
  auto& g = bind.graph();
  return g.gelu(g.conv1d(x, bind(join(prefix, "pos_conv.w")), cfg.conv_groups));
}

template <typename T>
NodeId unet_combine(Graph<T>& graph, NodeId early, NodeId late, NodeId w_skip) {
  if (graph.shape(early) != graph.shape(late)) {
    throw GraphError("unet_combine: " + shape_string(graph.shape(early)) + " vs " +
                     shape_string(graph.shape(late)));
  }
  const NodeId parts[] = {early, late};
  return graph.matmul(graph.concat(parts, 1), w_skip, false, true);
}

#define DUET_INSTANTIATE(T)                                                               \
  template Tensor<T> alibi_bias<T>(double, std::int64_t);                                 \
  template void init_stack<T>(ParameterStore<T>&, std::string_view, const BlockConfig&,   \
                              Rng&);                                                      \
  template void init_conv_positional<T>(ParameterStore<T>&, std::string_view,             \
                                        const BlockConfig&, Rng&);                        \
  template NodeId linear<T>(Binder<T>&, std::string_view, NodeId);                        \
  template std::vector<NodeId> encode_stack<T>(Binder<T>&, std::string_view,              \
                                               const BlockConfig&, NodeId);               \
  template NodeId conv_positional<T>(Binder<T>&, std::string_view, const BlockConfig&,    \
                                     NodeId);                                             \
  template NodeId unet_combine<T>(Graph<T>&, NodeId, NodeId, NodeId);

DUET_INSTANTIATE(float)
DUET_INSTANTIATE(double)

}  // namespace duet
