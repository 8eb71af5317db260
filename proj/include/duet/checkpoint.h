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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "duet/common.h"
#include "duet/tensor.h"

namespace duet {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2, kI64 = 3 };

struct Record {
  std::string name;
  DType dtype = DType::kU8;
  Shape shape;
  // Little-endian element bytes.
  std::string payload;
};

// Named-array container:
//   "DUETCKPT" u32 version u64 config_hash u32 n_records
//   per record: u32 name_len, name, u8 dtype, u32 rank, i64[rank] dims,
//               u64 payload_len, payload
//   u32 rng_len, rng state text, i64 step
//   u64 FNV-1a of every preceding byte
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t config_hash = 0;
  std::vector<Record> records;
  std::string rng_state;
  std::int64_t step = 0;

  bool has(std::string_view name) const;
  const Record& record(std::string_view name) const;

  // Stores a float or double tensor; replaces an existing record.
  template <typename T>
  void put(std::string name, const Tensor<T>& value);
  // Converts the stored floating-point record to T.
  template <typename T>
  Tensor<T> get(std::string_view name) const;
  void put_bytes(std::string name, std::string_view bytes);
  std::string get_bytes(std::string_view name) const;
  void put_i64(std::string name, std::vector<std::int64_t> values);
  std::vector<std::int64_t> get_i64(std::string_view name) const;
  // Names starting with `prefix`, in record order.
  std::vector<std::string> names(std::string_view prefix = "") const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Validates magic, version, checksum and layout before returning.
Checkpoint deserialize_checkpoint(std::string_view data);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// With an expected hash, a mismatching checkpoint is refused.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_hash = std::nullopt);

}  // namespace duet
