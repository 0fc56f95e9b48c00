/* Copyright 2026 The drdfl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace drdfl {

// splitmix64 finalizer; used to derive child seeds and to hash tags.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }

inline uint64_t hash_bytes(const void* ptr, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(ptr);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t hash_tag(std::string_view tag) { return hash_bytes(tag.data(), tag.size()); }

// Explicit random stream. Every stochastic operation in the project takes one
// of these; there is no hidden global RNG state. Children derived via child()
// are statistically disjoint and do not advance the parent, so per-sample
// workers in parallel loops each own their own stream and results do not
// depend on thread count. Gaussians come from Box-Muller on top of
// mt19937_64, which keeps draws identical across standard libraries.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : seed_(seed), gen_(mix64(seed)) {}

  uint64_t seed() const { return seed_; }

  RandomStream child(uint64_t tag) const { return RandomStream(mix64(seed_, tag)); }
  RandomStream child(std::string_view tag) const { return child(hash_tag(tag)); }
  RandomStream child(std::string_view tag, uint64_t index) const {
    return RandomStream(mix64(mix64(seed_, hash_tag(tag)), index));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer on [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace drdfl
