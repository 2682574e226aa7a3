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

#ifndef KYN_RNG_HPP
#define KYN_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace kyn {

// Mixes a seed with a stream tag so that independent consumers (epochs,
// identities, pools) draw from decorrelated streams.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

// std::mt19937_64 is fully specified by the standard, but the std
// distributions are not. The helpers below are written out so that a given
// seed yields the same draws with every standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform in [0, n). n must be positive.
  size_t uniform_index(size_t n);

  // Uniform in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Uniform in [0, 1).
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal();

  bool bernoulli(double p) { return uniform01() < p; }

  // k distinct indices from [0, n), in draw order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kyn

#endif  // KYN_RNG_HPP
