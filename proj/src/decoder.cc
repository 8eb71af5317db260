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

#include "duet/decoder.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace duet {

void DecoderConfig::validate() const {
  blocks.validate();
  if (input_dim <= 0) throw ConfigError("decoder: input_dim must be positive");
  if (blocks.d % 2 != 0) throw ConfigError("decoder: d must be even for the time embedding");
  if (encoder_layers < 1) throw ConfigError("decoder: encoder_layers must be >= 1");
  if (n_phones < 0) throw ConfigError("decoder: n_phones must be >= 0");
  if (!(sigma_min > 0.0 && sigma_min <= 1.0)) {
    throw ConfigError("decoder: sigma_min must be in (0, 1]");
  }
}

template <typename T>
FlowSample<T> ot_path(const Tensor<T>& x0, const Tensor<T>& x1, double t, double sigma_min) {
  if (x0.shape() != x1.shape()) {
    throw ConfigError("ot_path: x0 " + shape_string(x0.shape()) + " vs x1 " +
                      shape_string(x1.shape()));
  }
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("ot_path: t outside [0, 1]");
  if (!(sigma_min > 0.0)) throw ConfigError("ot_path: sigma_min must be positive");
  FlowSample<T> s{x0, x1, t, Tensor<T>(x0.shape()), Tensor<T>(x0.shape())};
  const double a = 1.0 - (1.0 - sigma_min) * t;
  const double b = 1.0 - sigma_min;
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    const double x0i = static_cast<double>(x0[i]);
    const double x1i = static_cast<double>(x1[i]);
    s.phi[i] = static_cast<T>(t == 0.0 ? x0i : a * x0i + t * x1i);
    s.u[i] = static_cast<T>(x1i - b * x0i);
  }
  return s;
}

template <typename T>
Tensor<T> timestep_embedding(double t, int d) {
  if (d < 2 || d % 2 != 0) throw ConfigError("timestep_embedding: d must be even");
  const int half = d / 2;
  Tensor<T> out(Shape{1, d});
  for (int j = 0; j < half; ++j) {
    const double exponent = half > 1 ? double(j) / double(half - 1) : 0.0;
    const double f = std::pow(1e4, exponent);
    out[j] = static_cast<T>(std::sin(f * t));
    out[half + j] = static_cast<T>(std::cos(f * t));
  }
  return out;
}

template <typename T>
void init_decoder(ParameterStore<T>& store, const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.blocks.d;
  const double sd = 1.0 / std::sqrt(double(d));
  store.add("decoder.time.in.w", normal_tensor<T>(Shape{d, d}, sd, rng));
  store.add("decoder.time.in.b", Tensor<T>(Shape{d}));
  store.add("decoder.time.out.w", normal_tensor<T>(Shape{d, d}, sd, rng));
  store.add("decoder.time.out.b", Tensor<T>(Shape{d}));
  init_stack(store, "decoder.", cfg.blocks, rng);
  store.add("decoder.out.w", normal_tensor<T>(Shape{cfg.input_dim, d}, sd, rng));
  store.add("decoder.out.b", Tensor<T>(Shape{cfg.input_dim}));
  store.add("proj.input.w",
            normal_tensor<T>(Shape{d, cfg.input_dim}, 1.0 / std::sqrt(double(cfg.input_dim)), rng));
  const double layer_sd = sd / std::sqrt(double(cfg.encoder_layers));
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    store.add("proj.layer" + std::to_string(i) + ".w", normal_tensor<T>(Shape{d, d}, layer_sd, rng));
  }
  store.add("cond.phone_emb", normal_tensor<T>(Shape{cfg.n_phones + 1, d}, sd, rng));
  store.add("cond.null_z", normal_tensor<T>(Shape{d}, sd, rng));
}

template <typename T>
NodeId condition_from_layers(Binder<T>& bind, const DecoderConfig& cfg,
                             std::span<const NodeId> layers) {
  if (static_cast<int>(layers.size()) != cfg.encoder_layers) {
    throw ConfigError("decoder: expected " + std::to_string(cfg.encoder_layers) +
                      " encoder layers, got " + std::to_string(layers.size()));
  }
  auto& g = bind.graph();
  NodeId z = -1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string name = "proj.layer" + std::to_string(i);
    if (!bind.has(name + ".w")) throw ConfigError("decoder: missing projection " + name);
    const NodeId term = linear(bind, name, layers[i]);
    z = z < 0 ? term : g.add(z, term);
  }
  return z;
}

template <typename T>
NodeId phone_embedding(Binder<T>& bind, const DecoderConfig& cfg,
                       std::span<const std::int64_t> phones) {
  for (auto p : phones) {
    if (p < 0 || p > cfg.n_phones) {
      throw ConfigError("decoder: condition token " + std::to_string(p) + " outside [0, " +
                        std::to_string(cfg.n_phones) + "]");
    }
  }
  return bind.graph().gather_rows(bind("cond.phone_emb"),
                                  std::vector<std::int64_t>(phones.begin(), phones.end()));
}

template <typename T>
NodeId null_condition(Binder<T>& bind, NodeId z, const MaskSpec& mask) {
  return apply_mask(bind.graph(), z, mask, bind("cond.null_z"));
}

template <typename T>
NodeId decoder_forward(Binder<T>& bind, const DecoderConfig& cfg, NodeId phi, double t,
                       NodeId cond) {
  auto& g = bind.graph();
  const Shape s = g.shape(phi);
  if (s.size() != 2 || s[1] != cfg.input_dim) {
    throw ConfigError("decoder: phi " + shape_string(s) + " does not match input_dim=" +
                      std::to_string(cfg.input_dim));
  }
  const Shape expect{s[0], cfg.blocks.d};
  if (g.shape(cond) != expect) {
    throw ConfigError("decoder: conditioning " + shape_string(g.shape(cond)) + ", expected " +
                      shape_string(expect));
  }
  const NodeId emb = g.constant(timestep_embedding<T>(t, cfg.blocks.d));
  const NodeId token = linear(bind, "decoder.time.out", g.gelu(linear(bind, "decoder.time.in", emb)));
  const NodeId frames = g.add(linear(bind, "proj.input", phi), cond);
  const NodeId parts[] = {token, frames};
  const auto outputs = encode_stack(bind, "decoder.", cfg.blocks, g.concat(parts, 0));
  const NodeId h = g.slice(outputs.back(), 0, 1, s[0] + 1);
  return linear(bind, "decoder.out", h);
}

template <typename T>
NodeId cfm_loss(Graph<T>& g, NodeId v_pred, const Tensor<T>& u, const MaskSpec& mask,
                double normalizer) {
  if (g.shape(v_pred) != u.shape() || u.rank() != 2 || u.dim(0) != mask.length) {
    throw ConfigError("cfm_loss: prediction " + shape_string(g.shape(v_pred)) + ", target " +
                      shape_string(u.shape()) + ", mask length " + std::to_string(mask.length));
  }
  const std::int64_t masked = mask.count();
  if (masked == 0) throw ConfigError("cfm_loss: empty mask");
  const NodeId diff = g.sub(v_pred, g.constant(u));
  const NodeId sq = g.sum_squares(g.masked_select(diff, mask.indicator));
  const double norm = normalizer > 0.0 ? normalizer : double(masked) * double(u.dim(1));
  return g.scale(sq, 1.0 / norm);
}

double sample_time(TimeSampling mode, Rng& rng) {
  if (mode == TimeSampling::kUniform) return rng.uniform_open();
  const double t = 1.0 / (1.0 + std::exp(-rng.normal()));
  // Keep the draw strictly inside (0, 1) even for extreme normals.
  return std::min(std::max(t, 1e-12), 1.0 - 1e-12);
}

#define DUET_INSTANTIATE(T)                                                                  \
  template FlowSample<T> ot_path<T>(const Tensor<T>&, const Tensor<T>&, double, double);     \
  template Tensor<T> timestep_embedding<T>(double, int);                                     \
  template void init_decoder<T>(ParameterStore<T>&, const DecoderConfig&, Rng&);             \
  template NodeId condition_from_layers<T>(Binder<T>&, const DecoderConfig&,                 \
                                           std::span<const NodeId>);                         \
  template NodeId phone_embedding<T>(Binder<T>&, const DecoderConfig&,                       \
                                     std::span<const std::int64_t>);                         \
  template NodeId null_condition<T>(Binder<T>&, NodeId, const MaskSpec&);                    \
  template NodeId decoder_forward<T>(Binder<T>&, const DecoderConfig&, NodeId, double,       \
                                     NodeId);                                                \
  template NodeId cfm_loss<T>(Graph<T>&, NodeId, const Tensor<T>&, const MaskSpec&, double);

DUET_INSTANTIATE(float)
DUET_INSTANTIATE(double)

}  // namespace duet
