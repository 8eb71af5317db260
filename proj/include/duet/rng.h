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
#include <random>
#include <string>

namespace duet {

// Seedable generator shared by every stochastic operation of a run.
//
// All derived draws are built from the raw 64-bit engine output with fixed
// formulas (no std:: distributions), so a given seed produces the same stream
// on every platform. Draw order is part of each caller's contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on the open interval (0, 1).
  double uniform_open();
  // Standard normal via Box-Muller; consumes two uniforms, keeps no cache.
  double normal();
  // Uniform integer on [lo, hi], unbiased by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  // Geometric on {1, 2, ...} with the given mean (>= 1).
  std::int64_t geometric(double mean);

  // Independent generator for a named sub-stream.
  Rng derive(std::uint64_t stream) const;

  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace duet
