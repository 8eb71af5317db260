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

#include "duet/checkpoint.h"

#include <algorithm>
#include <sstream>

#include "duet/binary_io.h"

namespace duet {

namespace {

constexpr char kMagic[] = "DUETCKPT";

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kI64: return 8;
  }
  throw FormatError("checkpoint: unknown dtype");
}

void upsert(std::vector<Record>& records, Record r) {
  for (auto& existing : records) {
    if (existing.name == r.name) {
      existing = std::move(r);
      return;
    }
  }
  records.push_back(std::move(r));
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

}  // namespace

bool Checkpoint::has(std::string_view name) const {
  return std::any_of(records.begin(), records.end(), [&](const Record& r) { return r.name == name; });
}

const Record& Checkpoint::record(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw FormatError("checkpoint: missing record " + std::string(name));
}

template <typename T>
void Checkpoint::put(std::string name, const Tensor<T>& value) {
  ByteWriter w;
  Record r;
  r.name = std::move(name);
  r.shape = value.shape();
  if constexpr (std::is_same_v<T, float>) {
    r.dtype = DType::kF32;
    for (float v : value.values()) w.f32(v);
  } else {
    r.dtype = DType::kF64;
    for (double v : value.values()) w.f64(v);
  }
  r.payload = w.take();
  upsert(records, std::move(r));
}

template <typename T>
Tensor<T> Checkpoint::get(std::string_view name) const {
  const Record& r = record(name);
  ByteReader rd(r.payload);
  std::vector<T> values(static_cast<std::size_t>(element_count(r.shape)));
  if (r.dtype == DType::kF32) {
    for (auto& v : values) v = static_cast<T>(rd.f32());
  } else if (r.dtype == DType::kF64) {
    for (auto& v : values) v = static_cast<T>(rd.f64());
  } else {
    throw FormatError("checkpoint: record " + r.name + " is not floating point");
  }
  return Tensor<T>(r.shape, std::move(values));
}

void Checkpoint::put_bytes(std::string name, std::string_view bytes) {
  upsert(records, Record{std::move(name), DType::kU8, Shape{static_cast<std::int64_t>(bytes.size())},
                         std::string(bytes)});
}

std::string Checkpoint::get_bytes(std::string_view name) const {
  const Record& r = record(name);
  if (r.dtype != DType::kU8) throw FormatError("checkpoint: record " + r.name + " is not bytes");
  return r.payload;
}

void Checkpoint::put_i64(std::string name, std::vector<std::int64_t> values) {
  ByteWriter w;
  for (auto v : values) w.i64(v);
  upsert(records, Record{std::move(name), DType::kI64, Shape{static_cast<std::int64_t>(values.size())},
                         w.take()});
}

std::vector<std::int64_t> Checkpoint::get_i64(std::string_view name) const {
  const Record& r = record(name);
  if (r.dtype != DType::kI64) throw FormatError("checkpoint: record " + r.name + " is not int64");
  ByteReader rd(r.payload);
  std::vector<std::int64_t> out(static_cast<std::size_t>(element_count(r.shape)));
  for (auto& v : out) v = rd.i64();
  return out;
}

std::vector<std::string> Checkpoint::names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (r.name.compare(0, prefix.size(), prefix) == 0) out.push_back(r.name);
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 8));
  w.u32(Checkpoint::kVersion);
  w.u64(c.config_hash);
  w.u32(static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    const auto expected = static_cast<std::size_t>(element_count(r.shape)) * dtype_size(r.dtype);
    if (r.payload.size() != expected) {
      throw FormatError("checkpoint: record " + r.name + " payload does not match its shape");
    }
    w.str(r.name);
    w.u8(static_cast<std::uint8_t>(r.dtype));
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.i64(d);
    w.u64(r.payload.size());
    w.bytes(r.payload);
  }
  w.str(c.rng_state);
  w.i64(c.step);
  const std::uint64_t sum = fnv1a(w.data());
  w.u64(sum);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view data) {
  if (data.size() < 8 + 4 + 8 || data.substr(0, 8) != std::string_view(kMagic, 8)) {
    throw FormatError("checkpoint: bad magic");
  }
  if (data.size() < 28) throw FormatError("checkpoint: truncated");
  {
    ByteReader tail(data.substr(data.size() - 8));
    if (tail.u64() != fnv1a(data.substr(0, data.size() - 8))) {
      throw FormatError("checkpoint: checksum mismatch");
    }
  }
  ByteReader r(data.substr(0, data.size() - 8));
  r.bytes(8);
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint c;
  c.config_hash = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    rec.name = r.str();
    const auto dtype = r.u8();
    if (dtype > static_cast<std::uint8_t>(DType::kI64)) throw FormatError("checkpoint: bad dtype");
    rec.dtype = static_cast<DType>(dtype);
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: bad rank for " + rec.name);
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.i64();
      if (d < 0) throw FormatError("checkpoint: negative extent in " + rec.name);
      rec.shape.push_back(d);
    }
    const auto len = r.u64();
    if (len != static_cast<std::uint64_t>(element_count(rec.shape)) * dtype_size(rec.dtype)) {
      throw FormatError("checkpoint: payload size mismatch for " + rec.name);
    }
    rec.payload = std::string(r.bytes(static_cast<std::size_t>(len)));
    c.records.push_back(std::move(rec));
  }
  c.rng_state = r.str();
  c.step = r.i64();
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_hash) {
  Checkpoint c = deserialize_checkpoint(read_file(path));
  if (expected_hash && *expected_hash != c.config_hash) {
    throw FormatError("checkpoint " + path.string() + " was written for architecture hash " +
                      hex(c.config_hash) + " but the configuration hashes to " + hex(*expected_hash) +
                      "; model settings differ");
  }
  return c;
}

template void Checkpoint::put<float>(std::string, const Tensor<float>&);
template void Checkpoint::put<double>(std::string, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(std::string_view) const;
template Tensor<double> Checkpoint::get<double>(std::string_view) const;

}  // namespace duet
