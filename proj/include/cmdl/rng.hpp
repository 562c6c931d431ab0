// Copyright 2026 The cmdl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace cmdl {

// Seeded counter-style PRNG built on the splitmix64 output function:
//   state += 0x9E3779B97F4A7C15 (golden-ratio gamma)
//   z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//   z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
//
// Uniform doubles take the top 53 bits; normals use the trigonometric
// Box-Muller transform (two uniforms -> two normals, one cached).
// The same seed gives the same sample sequence on every run of one build.
// Substreams derive fresh states by hashing (seed, stream id), so parallel
// workers can draw independently and deterministically.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix_(seed ^ 0x5DEECE66DULL)) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix_(state_);
  }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; 1-u keeps the log argument strictly positive.
    const double u = 1.0 - uniform01();
    const double v = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Unbiased integer in [0, n) by rejection on the low bits.
  uint64_t uniform_index(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Independent child stream for (this seed, stream id).
  Rng split(uint64_t stream) const {
    Rng child(0);
    child.state_ = mix_(state_ ^ mix_(stream + 0x632BE59BD9B4E019ULL));
    child.has_spare_ = false;
    return child;
  }

  template <typename T>
  void fill_normal(std::span<T> out, T mu, T sigma) {
    for (auto& x : out) x = static_cast<T>(normal(static_cast<double>(mu), static_cast<double>(sigma)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(uniform_index(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  static uint64_t mix_(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cmdl
