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

#include "duet/quantizer.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <utility>

#include "duet/transformer.h"

namespace duet {

namespace {

template <typename T>
double sq_dist(std::span<const T> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - b[j];
    s += diff * diff;
  }
  return s;
}

template <typename T>
Tensor<T> rows_of(const Tensor<double>& table, std::span<const std::int64_t> ids) {
  Tensor<T> out(Shape{static_cast<std::int64_t>(ids.size()), table.dim(1)});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = table.row(ids[i]);
    auto dst = out.row(static_cast<std::int64_t>(i));
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
  return out;
}

}  // namespace

template <typename T>
std::int64_t KMeansModel::assign(std::span<const T> point) const {
  if (static_cast<std::int64_t>(point.size()) != centroids.dim(1)) {
    throw ConfigError("kmeans: point of size " + std::to_string(point.size()) +
                      " for centroids of size " + std::to_string(centroids.dim(1)));
  }
  std::int64_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int64_t c = 0; c < centroids.dim(0); ++c) {
    const double dist = sq_dist(point, centroids.row(c));
    if (dist < best_d) {
      best_d = dist;
      best = c;
    }
  }
  return best;
}

template <typename T>
std::vector<std::int64_t> KMeansModel::assign_rows(const Tensor<T>& points) const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(points.dim(0)));
  for (std::int64_t i = 0; i < points.dim(0); ++i) out[static_cast<std::size_t>(i)] = assign(points.row(i));
  return out;
}

template <typename T>
KMeansModel kmeans_fit(const Tensor<T>& points, int k, int max_iter, Rng& rng) {
  if (points.rank() != 2) throw ConfigError("kmeans: points must be [N, d]");
  const std::int64_t n = points.dim(0);
  const std::int64_t d = points.dim(1);
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n < k) {
    throw ConfigError("kmeans: " + std::to_string(n) + " points for k=" + std::to_string(k));
  }
  if (max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");

  KMeansModel m;
  m.centroids = Tensor<double>(Shape{k, d});
  auto set_centroid = [&](std::int64_t c, std::int64_t i) {
    const auto src = points.row(i);
    for (std::int64_t j = 0; j < d; ++j) m.centroids(c, j) = static_cast<double>(src[static_cast<std::size_t>(j)]);
  };

  // k-means++ seeding.
  std::vector<double> closest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  set_centroid(0, rng.uniform_int(0, n - 1));
  for (std::int64_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      auto& ci = closest[static_cast<std::size_t>(i)];
      ci = std::min(ci, sq_dist(points.row(i), m.centroids.row(c - 1)));
      total += ci;
    }
    std::int64_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      pick = n - 1;
      for (std::int64_t i = 0; i < n; ++i) {
        r -= closest[static_cast<std::size_t>(i)];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(0, n - 1);
    }
    set_centroid(c, pick);
  }

  std::vector<std::int64_t> labels(static_cast<std::size_t>(n), -1);
  std::vector<std::int64_t> previous;
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < max_iter; ++iter) {
    double inertia = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      labels[u] = m.assign(points.row(i));
      dist[u] = sq_dist(points.row(i), m.centroids.row(labels[u]));
      inertia += dist[u];
    }
    m.inertia.push_back(inertia);
    m.iterations = iter + 1;
    if (labels == previous) break;

    std::vector<std::int64_t> sizes(static_cast<std::size_t>(k), 0);
    for (auto l : labels) ++sizes[static_cast<std::size_t>(l)];
    for (std::int64_t c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      std::int64_t far = -1;
      for (std::int64_t i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (sizes[static_cast<std::size_t>(labels[u])] < 2) continue;
        if (far < 0 || dist[u] > dist[static_cast<std::size_t>(far)]) far = i;
      }
      if (far < 0) break;
      --sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
      labels[static_cast<std::size_t>(far)] = c;
      dist[static_cast<std::size_t>(far)] = 0.0;
      sizes[static_cast<std::size_t>(c)] = 1;
    }

    Tensor<double> sums(Shape{k, d});
    for (std::int64_t i = 0; i < n; ++i) {
      const auto l = labels[static_cast<std::size_t>(i)];
      const auto src = points.row(i);
      for (std::int64_t j = 0; j < d; ++j) sums(l, j) += static_cast<double>(src[static_cast<std::size_t>(j)]);
    }
    for (std::int64_t c = 0; c < k; ++c) {
      const double size = static_cast<double>(sizes[static_cast<std::size_t>(c)]);
      if (size == 0.0) continue;
      for (std::int64_t j = 0; j < d; ++j) m.centroids(c, j) = sums(c, j) / size;
    }
    previous = labels;
  }
  return m;
}

std::vector<int> Quantizer::codebook_sizes() const {
  std::vector<int> out{semantic.k()};
  if (residual) out.push_back(residual->k());
  return out;
}

template <typename T>
Tensor<T> residual_input(const std::vector<Tensor<T>>& layers, const ParameterStore<T>& params,
                         int semantic_layer) {
  if (semantic_layer < 0 || semantic_layer >= static_cast<int>(layers.size())) {
    throw ConfigError("quantizer: semantic layer " + std::to_string(semantic_layer) +
                      " outside [0, " + std::to_string(layers.size()) + ")");
  }
  Graph<T> g(false);
  Binder<T> bind(g, params, [](std::string_view) { return false; });
  NodeId sum = -1;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    if (static_cast<int>(j) == semantic_layer) continue;
    const NodeId term = linear(bind, "proj.layer" + std::to_string(j), g.constant(layers[j]));
    sum = sum < 0 ? term : g.add(sum, term);
  }
  if (sum < 0) {
    const Tensor<T>& ref = layers[0];
    return Tensor<T>(Shape{ref.dim(0), params.get("proj.layer0.w").dim(0)});
  }
  return g.value(sum);
}

template <typename T>
std::vector<std::vector<std::int64_t>> quantize_tokens(const std::vector<Tensor<T>>& layers,
                                                       const ParameterStore<T>& params,
                                                       const Quantizer& q) {
  if (q.semantic.centroids.rank() != 2) throw ConfigError("quantizer: semantic model not fitted");
  if (q.semantic_layer < 0 || q.semantic_layer >= static_cast<int>(layers.size())) {
    throw ConfigError("quantizer: semantic layer out of range");
  }
  std::vector<std::vector<std::int64_t>> out;
  out.push_back(q.semantic.assign_rows(layers[static_cast<std::size_t>(q.semantic_layer)]));
  if (q.residual) out.push_back(q.residual->assign_rows(residual_input(layers, params, q.semantic_layer)));
  return out;
}

template <typename T>
NodeId dequantize(Binder<T>& bind, const Quantizer& q,
                  const std::vector<std::vector<std::int64_t>>& tokens) {
  if (static_cast<int>(tokens.size()) != q.streams()) {
    throw ConfigError("quantizer: expected " + std::to_string(q.streams()) + " token streams, got " +
                      std::to_string(tokens.size()));
  }
  auto& g = bind.graph();
  const NodeId centroids = g.constant(rows_of<T>(q.semantic.centroids, tokens[0]));
  NodeId z = linear(bind, "proj.layer" + std::to_string(q.semantic_layer), centroids);
  if (q.residual) {
    if (tokens[1].size() != tokens[0].size()) throw ConfigError("quantizer: stream lengths differ");
    z = g.add(z, g.constant(rows_of<T>(q.residual->centroids, tokens[1])));
  }
  return z;
}

template <typename T>
Tensor<T> quantize_condition(const std::vector<Tensor<T>>& layers,
                             const ParameterStore<T>& params, const Quantizer& q) {
  const auto tokens = quantize_tokens(layers, params, q);
  Graph<T> g(false);
  Binder<T> bind(g, params, [](std::string_view) { return false; });
  return g.value(dequantize(bind, q, tokens));
}

int code_bits(std::int64_t k) {
  if (k < 1) throw ConfigError("codebook size must be >= 1");
  int bits = 0;
  while ((std::int64_t{1} << bits) < k) ++bits;
  return bits;
}

double bitrate(std::span<const int> codebook_sizes, double frame_rate) {
  if (!(frame_rate > 0.0)) throw ConfigError("frame rate must be positive");
  double total = 0.0;
  for (int k : codebook_sizes) total += code_bits(k) * frame_rate;
  return total;
}

double mutual_information(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  if (a.size() != b.size()) {
    throw ConfigError("mutual_information: lengths " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()));
  }
  if (a.empty()) return 0.0;
  std::map<std::int64_t, double> ca;
  std::map<std::int64_t, double> cb;
  std::map<std::pair<std::int64_t, std::int64_t>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
    joint[{a[i], b[i]}] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  std::vector<double> terms;
  terms.reserve(joint.size());
  for (const auto& [key, c] : joint) {
    const double denom = ca[key.first] * cb[key.second];
    terms.push_back(c / n * std::log2(c * n / denom));
  }
  // Sorted summation makes the result independent of argument order.
  std::sort(terms.begin(), terms.end());
  double mi = 0.0;
  for (double t : terms) mi += t;
  return std::max(mi, 0.0);
}

double entropy(std::span<const std::int64_t> symbols) {
  if (symbols.empty()) return 0.0;
  std::map<std::int64_t, double> counts;
  for (auto s : symbols) counts[s] += 1.0;
  const double n = static_cast<double>(symbols.size());
  double h = 0.0;
  for (const auto& [s, c] : counts) h -= c / n * std::log2(c / n);
  return std::max(h, 0.0);
}

template <typename T>
MIReport analyze_layers(const Tensor<T>& raw, const std::vector<Tensor<T>>& layers,
                        std::span<const std::int64_t> phones,
                        std::span<const std::int64_t> speakers, int k, Rng& rng) {
  const auto n = static_cast<std::size_t>(raw.dim(0));
  if (phones.size() != n || speakers.size() != n) {
    throw ConfigError("analyze: labels must align with frames");
  }
  MIReport report;
  report.phone_entropy = entropy(phones);
  report.speaker_entropy = entropy(speakers);
  auto measure = [&](const Tensor<T>& x, int layer) {
    const auto model = kmeans_fit(x, k, 100, rng);
    const auto units = model.assign_rows(x);
    return LayerMI{layer, mutual_information(units, phones), mutual_information(units, speakers),
                   entropy(units)};
  };
  report.raw = measure(raw, -1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (static_cast<std::size_t>(layers[i].dim(0)) != n) {
      throw ConfigError("analyze: layer " + std::to_string(i) + " has a different frame count");
    }
    report.layers.push_back(measure(layers[i], static_cast<int>(i)));
  }
  return report;
}

int select_semantic_layer(const MIReport& report) {
  if (report.layers.empty()) throw ConfigError("select_semantic_layer: empty report");
  int best = 0;
  for (std::size_t i = 1; i < report.layers.size(); ++i) {
    if (report.layers[i].phone_mi > report.layers[static_cast<std::size_t>(best)].phone_mi) {
      best = static_cast<int>(i);
    }
  }
  return report.layers[static_cast<std::size_t>(best)].layer;
}

void write_tokens(std::ostream& out, const TokenFile& file) {
  const std::size_t streams = file.codebook_sizes.size();
  out << "duet-tokens 1\n";
  std::ostringstream rate;
  rate.precision(17);
  rate << file.frame_rate;
  out << "frame_rate " << rate.str() << "\ncodebooks";
  for (int k : file.codebook_sizes) out << ' ' << k;
  out << "\nutterances " << file.utterances.size() << '\n';
  for (const auto& utt : file.utterances) {
    if (utt.size() != streams) throw ConfigError("write_tokens: stream count mismatch");
    const std::size_t len = streams ? utt[0].size() : 0;
    bool first = true;
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t s = 0; s < streams; ++s) {
        if (utt[s].size() != len) throw ConfigError("write_tokens: stream lengths differ");
        if (!first) out << ' ';
        out << utt[s][i];
        first = false;
      }
    }
    out << '\n';
  }
}

TokenFile read_tokens(std::istream& in) {
  auto fail = [](const std::string& what) { throw ConfigError("token file: " + what); };
  std::string line;
  std::string key;
  TokenFile file;
  if (!std::getline(in, line) || line != "duet-tokens 1") fail("bad header");
  if (!std::getline(in, line)) fail("missing frame_rate");
  {
    std::istringstream s(line);
    if (!(s >> key >> file.frame_rate) || key != "frame_rate") fail("bad frame_rate line");
  }
  if (!std::getline(in, line)) fail("missing codebooks");
  {
    std::istringstream s(line);
    s >> key;
    if (key != "codebooks") fail("bad codebooks line");
    int k = 0;
    while (s >> k) file.codebook_sizes.push_back(k);
    if (file.codebook_sizes.empty()) fail("no codebooks");
  }
  std::size_t count = 0;
  if (!std::getline(in, line)) fail("missing utterance count");
  {
    std::istringstream s(line);
    if (!(s >> key >> count) || key != "utterances") fail("bad utterances line");
  }
  const std::size_t streams = file.codebook_sizes.size();
  for (std::size_t u = 0; u < count; ++u) {
    if (!std::getline(in, line)) fail("truncated at utterance " + std::to_string(u));
    std::istringstream s(line);
    std::vector<std::int64_t> flat;
    std::int64_t v = 0;
    while (s >> v) flat.push_back(v);
    if (!s.eof()) fail("non-integer token in utterance " + std::to_string(u));
    if (flat.size() % streams != 0) fail("token count not a multiple of the stream count");
    std::vector<std::vector<std::int64_t>> utt(streams);
    for (std::size_t i = 0; i < flat.size(); ++i) utt[i % streams].push_back(flat[i]);
    for (std::size_t st = 0; st < streams; ++st) {
      for (auto t : utt[st]) {
        if (t < 0 || t >= file.codebook_sizes[st]) fail("token outside its codebook");
      }
    }
    file.utterances.push_back(std::move(utt));
  }
  return file;
}

#define DUET_INSTANTIATE(T)                                                                    \
  template std::int64_t KMeansModel::assign<T>(std::span<const T>) const;                      \
  template std::vector<std::int64_t> KMeansModel::assign_rows<T>(const Tensor<T>&) const;      \
  template KMeansModel kmeans_fit<T>(const Tensor<T>&, int, int, Rng&);                        \
  template Tensor<T> residual_input<T>(const std::vector<Tensor<T>>&, const ParameterStore<T>&, \
                                       int);                                                   \
  template std::vector<std::vector<std::int64_t>> quantize_tokens<T>(                          \
      const std::vector<Tensor<T>>&, const ParameterStore<T>&, const Quantizer&);              \
  template NodeId dequantize<T>(Binder<T>&, const Quantizer&,                                  \
                                const std::vector<std::vector<std::int64_t>>&);                \
  template Tensor<T> quantize_condition<T>(const std::vector<Tensor<T>>&,                      \
                                           const ParameterStore<T>&, const Quantizer&);        \
  template MIReport analyze_layers<T>(const Tensor<T>&, const std::vector<Tensor<T>>&,         \
                                      std::span<const std::int64_t>,                           \
                                      std::span<const std::int64_t>, int, Rng&);

DUET_INSTANTIATE(float)
DUET_INSTANTIATE(double)

}  // namespace duet
