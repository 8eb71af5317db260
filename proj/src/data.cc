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

#include "duet/data.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duet/binary_io.h"

namespace duet {

namespace {

constexpr char kCorpusMagic[] = "DUETCORP";
constexpr std::uint32_t kCorpusVersion = 1;

}  // namespace

void CorpusParams::validate() const {
  if (input_dim < 1) throw ConfigError("corpus: input_dim must be >= 1");
  if (n_phones < 2) throw ConfigError("corpus: n_phones must be >= 2");
  if (n_speakers < 1) throw ConfigError("corpus: n_speakers must be >= 1");
  if (n_utterances < 1) throw ConfigError("corpus: n_utterances must be >= 1");
  if (min_length < 1 || max_length < min_length) {
    throw ConfigError("corpus: need 1 <= min_length <= max_length");
  }
  if (!(mean_segment >= 1.0)) throw ConfigError("corpus: mean_segment must be >= 1");
  if (!(prototype_scale >= 0.0 && speaker_scale >= 0.0 && noise_scale >= 0.0)) {
    throw ConfigError("corpus: scales must be non-negative");
  }
  if (n_phones > 65535 || n_speakers > 65535) throw ConfigError("corpus: label ids exceed 16 bits");
}

std::int64_t Corpus::total_frames() const {
  std::int64_t n = 0;
  for (const auto& u : utterances) n += u.length();
  return n;
}

Tensor<float> Corpus::stacked() const {
  Tensor<float> out(Shape{total_frames(), input_dim});
  std::int64_t r = 0;
  for (const auto& u : utterances) {
    std::copy(u.frames.values().begin(), u.frames.values().end(), out.data() + r * input_dim);
    r += u.length();
  }
  return out;
}

std::vector<std::int64_t> Corpus::frame_phones() const {
  std::vector<std::int64_t> out;
  for (const auto& u : utterances) out.insert(out.end(), u.phones.begin(), u.phones.end());
  return out;
}

std::vector<std::int64_t> Corpus::frame_speakers() const {
  std::vector<std::int64_t> out;
  for (const auto& u : utterances) out.insert(out.end(), static_cast<std::size_t>(u.length()), u.speaker);
  return out;
}

Corpus generate_corpus(const CorpusParams& p, Rng& rng) {
  p.validate();
  const int d = p.input_dim;
  const auto prototypes = normal_tensor<double>(Shape{p.n_phones, d}, p.prototype_scale, rng);
  const auto offsets = normal_tensor<double>(Shape{p.n_speakers, d}, p.speaker_scale, rng);
  Corpus c;
  c.input_dim = d;
  c.n_phones = p.n_phones;
  c.n_speakers = p.n_speakers;
  for (int u = 0; u < p.n_utterances; ++u) {
    Utterance utt;
    utt.speaker = rng.uniform_int(0, p.n_speakers - 1);
    const std::int64_t len = rng.uniform_int(p.min_length, p.max_length);
    utt.frames = Tensor<float>(Shape{len, d});
    while (static_cast<std::int64_t>(utt.phones.size()) < len) {
      const std::int64_t phone = rng.uniform_int(0, p.n_phones - 1);
      const std::int64_t seg = rng.geometric(p.mean_segment);
      for (std::int64_t i = 0; i < seg && static_cast<std::int64_t>(utt.phones.size()) < len; ++i) {
        utt.phones.push_back(phone);
      }
    }
    for (std::int64_t i = 0; i < len; ++i) {
      const auto phone = utt.phones[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j) {
        const double noise = p.noise_scale > 0.0 ? p.noise_scale * rng.normal() : 0.0;
        utt.frames(i, j) = static_cast<float>(prototypes(phone, j) + offsets(utt.speaker, j) + noise);
      }
    }
    c.utterances.push_back(std::move(utt));
  }
  return c;
}

NormStats compute_stats(const Corpus& corpus) {
  const std::int64_t n = corpus.total_frames();
  if (n == 0) throw ConfigError("normalize: empty corpus");
  const int d = corpus.input_dim;
  NormStats s;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  s.stddev.assign(static_cast<std::size_t>(d), 0.0);
  for (const auto& u : corpus.utterances) {
    for (std::int64_t i = 0; i < u.length(); ++i) {
      for (int j = 0; j < d; ++j) s.mean[static_cast<std::size_t>(j)] += u.frames(i, j);
    }
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (const auto& u : corpus.utterances) {
    for (std::int64_t i = 0; i < u.length(); ++i) {
      for (int j = 0; j < d; ++j) {
        const double diff = u.frames(i, j) - s.mean[static_cast<std::size_t>(j)];
        s.stddev[static_cast<std::size_t>(j)] += diff * diff;
      }
    }
  }
  for (int j = 0; j < d; ++j) {
    double var = s.stddev[static_cast<std::size_t>(j)] / static_cast<double>(n);
    if (var < 1e-8) {
      var = 1e-8;
      s.floored.push_back(j);
    }
    s.stddev[static_cast<std::size_t>(j)] = std::sqrt(var);
  }
  return s;
}

void apply_stats(Corpus& corpus, const NormStats& s) {
  if (static_cast<int>(s.mean.size()) != corpus.input_dim ||
      static_cast<int>(s.stddev.size()) != corpus.input_dim) {
    throw ConfigError("normalize: statistics do not match input_dim");
  }
  for (auto& u : corpus.utterances) {
    for (std::int64_t i = 0; i < u.length(); ++i) {
      for (int j = 0; j < corpus.input_dim; ++j) {
        const auto k = static_cast<std::size_t>(j);
        u.frames(i, j) = static_cast<float>((u.frames(i, j) - s.mean[k]) / s.stddev[k]);
      }
    }
  }
}

NormStats normalize(Corpus& corpus) {
  NormStats s = compute_stats(corpus);
  apply_stats(corpus, s);
  return s;
}

template <typename T>
void denormalize(Tensor<T>& frames, const NormStats& s) {
  const auto d = static_cast<std::int64_t>(s.mean.size());
  if (frames.rank() != 2 || frames.dim(1) != d) throw ConfigError("denormalize: shape mismatch");
  for (std::int64_t i = 0; i < frames.dim(0); ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      const auto k = static_cast<std::size_t>(j);
      frames(i, j) = static_cast<T>(frames(i, j) * s.stddev[k] + s.mean[k]);
    }
  }
}

std::int64_t Batch::masked_frames() const {
  std::int64_t n = 0;
  for (const auto& it : items) n += it.mask.count();
  return n;
}

Batch make_batch(const Corpus& corpus, int batch_size, std::int64_t max_frames, double mask_prob,
                 int mask_span, Rng& rng) {
  if (batch_size < 1) throw ConfigError("make_batch: batch size must be >= 1");
  if (max_frames < 1) throw ConfigError("make_batch: max_frames must be >= 1");
  const auto n = static_cast<std::int64_t>(corpus.utterances.size());
  if (n == 0) throw ConfigError("make_batch: empty corpus");

  std::vector<std::int64_t> picks;
  if (batch_size <= n) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int b = 0; b < batch_size; ++b) {
      const auto j = rng.uniform_int(b, n - 1);
      std::swap(order[static_cast<std::size_t>(b)], order[static_cast<std::size_t>(j)]);
      picks.push_back(order[static_cast<std::size_t>(b)]);
    }
  } else {
    for (int b = 0; b < batch_size; ++b) picks.push_back(rng.uniform_int(0, n - 1));
  }

  Batch batch;
  for (auto src : picks) {
    const Utterance& u = corpus.utterances[static_cast<std::size_t>(src)];
    BatchItem item;
    item.source = src;
    item.speaker = u.speaker;
    const std::int64_t len = std::min(u.length(), max_frames);
    item.offset = u.length() > max_frames ? rng.uniform_int(0, u.length() - max_frames) : 0;
    item.frames = u.frames.slice_rows(item.offset, item.offset + len);
    if (!u.phones.empty()) {
      item.phones.assign(u.phones.begin() + item.offset, u.phones.begin() + item.offset + len);
    }
    if (mask_prob > 0.0) item.mask = sample_mask(len, mask_prob, mask_span, rng);
    batch.length = std::max(batch.length, len);
    batch.items.push_back(std::move(item));
  }
  const int d = corpus.input_dim;
  batch.features = Tensor<float>(Shape{batch_size, batch.length, d});
  for (std::size_t b = 0; b < batch.items.size(); ++b) {
    const auto& it = batch.items[b];
    std::copy(it.frames.values().begin(), it.frames.values().end(),
              batch.features.data() + static_cast<std::int64_t>(b) * batch.length * d);
    std::vector<std::uint8_t> pad(static_cast<std::size_t>(batch.length), 1);
    std::fill(pad.begin(), pad.begin() + it.frames.dim(0), std::uint8_t{0});
    batch.pad.push_back(std::move(pad));
  }
  return batch;
}

std::string serialize_corpus(const Corpus& c) {
  ByteWriter w;
  w.bytes(std::string_view(kCorpusMagic, 8));
  w.u32(kCorpusVersion);
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.utterances.size()));
  w.u32(static_cast<std::uint32_t>(c.n_phones));
  w.u32(static_cast<std::uint32_t>(c.n_speakers));
  w.u32(c.has_labels ? 1u : 0u);
  for (const auto& u : c.utterances) {
    if (u.frames.rank() != 2 || u.frames.dim(1) != c.input_dim) {
      throw ConfigError("corpus: utterance frames do not match input_dim");
    }
    w.u32(static_cast<std::uint32_t>(u.length()));
    for (float v : u.frames.values()) w.f32(v);
    if (c.has_labels) {
      if (static_cast<std::int64_t>(u.phones.size()) != u.length()) {
        throw ConfigError("corpus: phone labels do not align with frames");
      }
      for (auto p : u.phones) w.u16(static_cast<std::uint16_t>(p));
      w.u16(static_cast<std::uint16_t>(u.speaker));
    }
  }
  return w.take();
}

Corpus deserialize_corpus(std::string_view data) {
  ByteReader r(data);
  if (r.remaining() < 8 || r.bytes(8) != std::string_view(kCorpusMagic, 8)) {
    throw FormatError("corpus: bad magic");
  }
  const auto version = r.u32();
  if (version != kCorpusVersion) {
    throw FormatError("corpus: unsupported version " + std::to_string(version));
  }
  Corpus c;
  c.input_dim = static_cast<int>(r.u32());
  const auto count = r.u32();
  c.n_phones = static_cast<int>(r.u32());
  c.n_speakers = static_cast<int>(r.u32());
  c.has_labels = (r.u32() & 1u) != 0;
  if (c.input_dim < 1) throw FormatError("corpus: input_dim must be >= 1");
  for (std::uint32_t k = 0; k < count; ++k) {
    Utterance u;
    const std::int64_t len = r.u32();
    if (static_cast<std::uint64_t>(len) * static_cast<std::uint64_t>(c.input_dim) * 4 > r.remaining()) {
      throw FormatError("corpus: utterance " + std::to_string(k) + " truncated");
    }
    u.frames = Tensor<float>(Shape{len, c.input_dim});
    for (auto& v : u.frames.values()) v = r.f32();
    if (c.has_labels) {
      u.phones.resize(static_cast<std::size_t>(len));
      for (auto& p : u.phones) {
        p = r.u16();
        if (p >= c.n_phones) throw FormatError("corpus: phone label out of range");
      }
      u.speaker = r.u16();
      if (u.speaker >= c.n_speakers) throw FormatError("corpus: speaker id out of range");
    }
    c.utterances.push_back(std::move(u));
  }
  if (!r.done()) throw FormatError("corpus: trailing bytes");
  return c;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  write_file_atomic(path, serialize_corpus(corpus));
}

Corpus read_corpus(const std::filesystem::path& path) {
  return deserialize_corpus(read_file(path));
}

template void denormalize<float>(Tensor<float>&, const NormStats&);
template void denormalize<double>(Tensor<double>&, const NormStats&);

}  // namespace duet
