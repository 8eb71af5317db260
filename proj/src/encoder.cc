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

#include "duet/encoder.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace duet {

MaskSpec MaskSpec::from_indices(std::int64_t length, std::span<const std::int64_t> indices) {
  MaskSpec m = none(length);
  for (auto i : indices) {
    if (i < 0 || i >= length) {
      throw ConfigError("mask index " + std::to_string(i) + " outside length " +
                        std::to_string(length));
    }
    m.indicator[static_cast<std::size_t>(i)] = 1;
  }
  return m;
}

MaskSpec MaskSpec::none(std::int64_t length) {
  MaskSpec m;
  m.length = length;
  m.indicator.assign(static_cast<std::size_t>(length), 0);
  return m;
}

MaskSpec MaskSpec::all(std::int64_t length) {
  MaskSpec m;
  m.length = length;
  m.indicator.assign(static_cast<std::size_t>(length), 1);
  return m;
}

std::int64_t MaskSpec::count() const {
  return std::count(indicator.begin(), indicator.end(), std::uint8_t{1});
}

std::vector<std::int64_t> MaskSpec::indices() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < indicator.size(); ++i) {
    if (indicator[i]) out.push_back(static_cast<std::int64_t>(i));
  }
  return out;
}

MaskSpec sample_mask(std::int64_t length, double p, int span, Rng& rng) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("mask probability must be in (0, 1]");
  if (span < 1) throw ConfigError("mask span must be >= 1");
  if (length < 1) throw ConfigError("cannot mask an empty sequence");
  MaskSpec m = MaskSpec::none(length);
  m.start_prob = p;
  m.span = span;
  for (std::int64_t i = 0; i < length; ++i) {
    if (rng.bernoulli(p)) m.starts.push_back(i);
  }
  if (m.starts.empty()) {
    m.starts.push_back(rng.uniform_int(0, length - 1));
    m.forced = true;
  }
  for (auto s : m.starts) {
    const std::int64_t end = std::min<std::int64_t>(length, s + span);
    for (std::int64_t i = s; i < end; ++i) m.indicator[static_cast<std::size_t>(i)] = 1;
  }
  return m;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const MaskSpec& mask, std::span<const T> emb) {
  if (x.rank() != 2 || x.dim(0) != mask.length || x.dim(1) != static_cast<std::int64_t>(emb.size())) {
    throw ConfigError("apply_mask: features " + shape_string(x.shape()) + ", mask length " +
                      std::to_string(mask.length) + ", embedding size " +
                      std::to_string(emb.size()));
  }
  Tensor<T> out = x;
  for (std::int64_t i = 0; i < mask.length; ++i) {
    if (mask.contains(i)) std::copy(emb.begin(), emb.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
NodeId apply_mask(Graph<T>& g, NodeId x, const MaskSpec& mask, NodeId emb) {
  const Shape s = g.shape(x);
  if (s.size() != 2 || s[0] != mask.length) {
    throw ConfigError("apply_mask: features " + shape_string(s) + " for mask length " +
                      std::to_string(mask.length));
  }
  Tensor<T> keep(Shape{mask.length, 1});
  Tensor<T> drop(Shape{mask.length, 1});
  for (std::int64_t i = 0; i < mask.length; ++i) {
    keep[i] = mask.contains(i) ? T{0} : T{1};
    drop[i] = T{1} - keep[i];
  }
  return g.add(g.mul(x, g.constant(std::move(keep))), g.mul(g.constant(std::move(drop)), emb));
}

Codebook::Codebook(Tensor<double> sums, std::vector<double> counts)
    : sums_(std::move(sums)), counts_(std::move(counts)), codewords_(sums_.shape()) {
  if (sums_.rank() != 2 || sums_.dim(0) != static_cast<std::int64_t>(counts_.size())) {
    throw ConfigError("codebook: sums " + shape_string(sums_.shape()) + " with " +
                      std::to_string(counts_.size()) + " counts");
  }
  for (std::size_t v = 0; v < counts_.size(); ++v) {
    if (!(counts_[v] > 0.0)) throw ConfigError("codebook: cluster sizes must be positive");
    const auto r = static_cast<std::int64_t>(v);
    for (std::int64_t j = 0; j < sums_.dim(1); ++j) codewords_(r, j) = sums_(r, j) / counts_[v];
  }
}

Codebook Codebook::random(int size, int dim, Rng& rng) {
  return Codebook(normal_tensor<double>(Shape{size, dim}, 1.0 / std::sqrt(double(dim)), rng),
                  std::vector<double>(static_cast<std::size_t>(size), 1.0));
}

template <typename T>
std::int64_t Codebook::nearest(std::span<const T> z) const {
  if (static_cast<std::int64_t>(z.size()) != sums_.dim(1)) {
    throw ConfigError("codebook: query of size " + std::to_string(z.size()) +
                      " for codewords of size " + std::to_string(sums_.dim(1)));
  }
  std::int64_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::int64_t v = 0; v < size(); ++v) {
    const auto e = codewords_.row(v);
    double dist = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double diff = static_cast<double>(z[j]) - e[j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = v;
    }
  }
  return best;
}

template <typename T>
void Codebook::update(const Tensor<T>& points, std::span<const std::int64_t> labels,
                      double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("codebook decay must be in (0, 1]");
  if (points.rank() != 2 || points.dim(1) != sums_.dim(1) ||
      points.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw ConfigError("codebook update: points " + shape_string(points.shape()) + " with " +
                      std::to_string(labels.size()) + " labels");
  }
  const std::int64_t d = sums_.dim(1);
  Tensor<double> batch_sums(sums_.shape());
  std::vector<double> batch_counts(counts_.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = labels[i];
    if (v < 0 || v >= size()) throw ConfigError("codebook update: label out of range");
    batch_counts[static_cast<std::size_t>(v)] += 1.0;
    for (std::int64_t j = 0; j < d; ++j) {
      batch_sums(v, j) += static_cast<double>(points(static_cast<std::int64_t>(i), j));
    }
  }
  for (std::int64_t v = 0; v < size(); ++v) {
    const auto u = static_cast<std::size_t>(v);
    for (std::int64_t j = 0; j < d; ++j) {
      sums_(v, j) = decay * sums_(v, j) + (1.0 - decay) * batch_sums(v, j);
    }
    counts_[u] = std::max(decay * counts_[u] + (1.0 - decay) * batch_counts[u],
                          std::numeric_limits<double>::min());
    if (batch_counts[u] > 0.0 || counts_[u] > 1e-200) {
      for (std::int64_t j = 0; j < d; ++j) codewords_(v, j) = sums_(v, j) / counts_[u];
    }
  }
}

void EncoderConfig::validate() const {
  blocks.validate();
  if (input_dim <= 0) throw ConfigError("encoder: input_dim must be positive");
  if (codebook_size < 1) throw ConfigError("encoder: codebook size must be >= 1");
  if (top_k < 1 || top_k > blocks.layers) {
    throw ConfigError("encoder: top_k must be in [1, layers]");
  }
  if (!(codebook_decay > 0.0 && codebook_decay <= 1.0)) {
    throw ConfigError("encoder: codebook decay must be in (0, 1]");
  }
}

std::vector<int> EncoderConfig::target_layers() const {
  std::vector<int> out;
  for (int i = blocks.layers - top_k; i < blocks.layers; ++i) out.push_back(i);
  return out;
}

template <typename T>
void init_encoder(ParameterStore<T>& store, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.blocks.d;
  store.add("encoder.mask_emb", normal_tensor<T>(Shape{cfg.input_dim}, 1.0, rng));
  store.add("encoder.in_proj.w",
            normal_tensor<T>(Shape{d, cfg.input_dim}, 1.0 / std::sqrt(double(cfg.input_dim)), rng));
  store.add("encoder.in_proj.b", Tensor<T>(Shape{d}));
  init_conv_positional(store, "encoder.", cfg.blocks, rng);
  init_stack(store, "encoder.", cfg.blocks, rng);
  for (int k = 0; k < cfg.top_k; ++k) {
    const std::string head = "heads." + std::to_string(k);
    store.add(head + ".w", normal_tensor<T>(Shape{cfg.codebook_size, d}, 1.0 / std::sqrt(double(d)), rng));
    store.add(head + ".b", Tensor<T>(Shape{cfg.codebook_size}));
  }
}

template <typename T>
std::vector<NodeId> encoder_forward(Binder<T>& bind, const EncoderConfig& cfg, NodeId x,
                                    const MaskSpec* mask) {
  auto& g = bind.graph();
  const Shape s = g.shape(x);
  if (s.size() != 2 || s[1] != cfg.input_dim) {
    throw ConfigError("encoder: input " + shape_string(s) + " does not match input_dim=" +
                      std::to_string(cfg.input_dim));
  }
  NodeId in = x;
  if (mask) in = apply_mask(g, x, *mask, bind("encoder.mask_emb"));
  NodeId h = linear(bind, "encoder.in_proj", in);
  h = g.add(h, conv_positional(bind, "encoder.", cfg.blocks, h));
  return encode_stack(bind, "encoder.", cfg.blocks, h);
}

template <typename T>
std::vector<Tensor<T>> encoder_layers(const ParameterStore<T>& params, const EncoderConfig& cfg,
                                      const Tensor<T>& x) {
  Graph<T> g(false);
  Binder<T> bind(g, params, [](std::string_view) { return false; });
  const auto layers = encoder_forward(bind, cfg, g.constant(x), nullptr);
  std::vector<Tensor<T>> out;
  out.reserve(layers.size());
  for (NodeId id : layers) out.push_back(g.value(id));
  return out;
}

template <typename T>
TeacherTargets<T> teacher_labels(const ParameterStore<T>& teacher, const EncoderConfig& cfg,
                                 const Tensor<T>& x, std::span<const Codebook> codebooks) {
  if (static_cast<int>(codebooks.size()) != cfg.top_k) {
    throw ConfigError("teacher_labels: need one codebook per target layer");
  }
  Graph<T> g(false);
  Binder<T> bind(g, teacher, [](std::string_view) { return false; });
  const auto layers = encoder_forward(bind, cfg, g.constant(x), nullptr);
  TeacherTargets<T> out;
  const auto targets = cfg.target_layers();
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Tensor<T>& z = g.value(layers[static_cast<std::size_t>(targets[k])]);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(z.dim(0)));
    for (std::int64_t i = 0; i < z.dim(0); ++i) {
      labels[static_cast<std::size_t>(i)] = codebooks[k].nearest(z.row(i));
    }
    out.outputs.push_back(z);
    out.labels.push_back(std::move(labels));
  }
  return out;
}

template <typename T>
NodeId encoder_loss(Binder<T>& bind, const EncoderConfig& cfg, NodeId z,
                    const std::vector<std::vector<std::int64_t>>& labels, const MaskSpec& mask,
                    double normalizer) {
  auto& g = bind.graph();
  const std::int64_t masked = mask.count();
  if (masked == 0) throw ConfigError("encoder_loss: empty mask");
  if (static_cast<int>(labels.size()) != cfg.top_k) {
    throw ConfigError("encoder_loss: need labels for each target layer");
  }
  const NodeId selected = g.masked_select(z, mask.indicator);
  const auto positions = mask.indices();
  std::vector<NodeId> terms;
  for (int k = 0; k < cfg.top_k; ++k) {
    const auto& all = labels[static_cast<std::size_t>(k)];
    if (static_cast<std::int64_t>(all.size()) != mask.length) {
      throw ConfigError("encoder_loss: label sequence length mismatch");
    }
    std::vector<std::int64_t> picked;
    picked.reserve(positions.size());
    for (auto i : positions) picked.push_back(all[static_cast<std::size_t>(i)]);
    const NodeId logp = g.log_softmax(linear(bind, "heads." + std::to_string(k), selected));
    terms.push_back(g.sum(g.take_along_rows(logp, std::move(picked))));
  }
  NodeId total = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) total = g.add(total, terms[k]);
  const double norm = normalizer > 0.0 ? normalizer : double(cfg.top_k) * double(masked);
  return g.scale(total, -1.0 / norm);
}

double TeacherSchedule::decay_at(std::int64_t step) const {
  if (ramp_steps <= 0 || step >= ramp_steps) return end;
  if (step <= 0) return start;
  return start + (end - start) * static_cast<double>(step) / static_cast<double>(ramp_steps);
}

template <typename T>
void ema_update(ParameterStore<T>& teacher, const ParameterStore<T>& student, double decay) {
  const T keep = static_cast<T>(decay);
  const T take = static_cast<T>(1.0 - decay);
  for (auto& [name, value] : teacher.entries()) {
    const Tensor<T>& s = student.get(name);
    if (s.shape() != value.shape()) throw ConfigError("ema_update: shape mismatch for " + name);
    for (std::int64_t i = 0; i < value.size(); ++i) value[i] = keep * value[i] + take * s[i];
  }
}

#define DUET_INSTANTIATE(T)                                                                   \
  template Tensor<T> apply_mask<T>(const Tensor<T>&, const MaskSpec&, std::span<const T>);    \
  template NodeId apply_mask<T>(Graph<T>&, NodeId, const MaskSpec&, NodeId);                  \
  template std::int64_t Codebook::nearest<T>(std::span<const T>) const;                       \
  template void Codebook::update<T>(const Tensor<T>&, std::span<const std::int64_t>, double); \
  template void init_encoder<T>(ParameterStore<T>&, const EncoderConfig&, Rng&);              \
  template std::vector<NodeId> encoder_forward<T>(Binder<T>&, const EncoderConfig&, NodeId,   \
                                                  const MaskSpec*);                           \
  template std::vector<Tensor<T>> encoder_layers<T>(const ParameterStore<T>&,                \
                                                    const EncoderConfig&, const Tensor<T>&);  \
  template TeacherTargets<T> teacher_labels<T>(const ParameterStore<T>&,                      \
                                               const EncoderConfig&, const Tensor<T>&,        \
                                               std::span<const Codebook>);                    \
  template NodeId encoder_loss<T>(Binder<T>&, const EncoderConfig&, NodeId,                   \
                                  const std::vector<std::vector<std::int64_t>>&,              \
                                  const MaskSpec&, double);                                   \
  template void ema_update<T>(ParameterStore<T>&, const ParameterStore<T>&, double);

DUET_INSTANTIATE(float)
DUET_INSTANTIATE(double)

}  // namespace duet
