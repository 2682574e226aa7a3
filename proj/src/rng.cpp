// Copyright 2026 The KYN Authors. All Rights Reserved.
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

#include "kyn/rng.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

namespace kyn {

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

size_t Rng::uniform_index(size_t n) {
  const uint64_t bound = static_cast<uint64_t>(n);
  // Rejection sampling removes modulo bias.
  const uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<size_t>(x % bound);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  return lo + static_cast<int64_t>(uniform_index(static_cast<size_t>(hi - lo) + 1));
}

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller; the second variate is discarded to keep the state simple.
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
  // Sparse Fisher-Yates: O(k) memory regardless of n.
  std::unordered_map<size_t, size_t> swapped;
  std::vector<size_t> out;
  out.reserve(k);
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + uniform_index(n - i);
    auto value_at = [&](size_t idx) {
      auto it = swapped.find(idx);
      return it == swapped.end() ? idx : it->second;
    };
    const size_t vj = value_at(j);
    const size_t vi = value_at(i);
    swapped[j] = vi;
    out.push_back(vj);
  }
  return out;
}

}  // namespace kyn
