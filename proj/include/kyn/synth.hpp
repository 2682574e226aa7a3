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

// Synthetic labeled corpora: each identity is a base call graphlet that is
// re-"compiled" several times under different architecture profiles with
// multiplicative count noise and random edge dropout.

#ifndef KYN_SYNTH_HPP
#define KYN_SYNTH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kyn/dataset.hpp"

namespace kyn {

struct SynthSpec {
  size_t num_identities = 100;
  size_t variants_per_identity = 2;
  std::vector<std::string> architectures = {"x86-64", "arm32", "mips32"};
  // Relative (log-space) standard deviation per feature slot. The num_edges
  // slot is ignored because that feature is derived from the degrees.
  FeatureVector feature_noise = {0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  // Per-architecture multiplicative factors per feature slot. Architectures
  // not listed use default_scale_profile().
  std::map<std::string, FeatureVector> scale_profiles;
  double edge_dropout = 0.1;
  uint64_t seed = 0;

  // Shape of the base graphlets.
  int max_callers = 4;
  int min_callees = 1;
  int max_callees = 6;
  int max_callees_of_callee = 3;
  double extra_edge_probability = 0.15;

  // Throws Error(kValidation).
  void validate() const;

  nlohmann::json to_json() const;
  // Unknown keys are rejected so that typos in config files surface.
  static SynthSpec from_json(const nlohmann::json& config);
};

// Instruction-count multiplier in [0.6, 1.6] for the architecture; all other
// slots are 1.
FeatureVector default_scale_profile(std::string_view architecture);

// Records are identity-major: all variants of identity 0, then identity 1, ...
// The result has not been deduplicated or augmented.
Corpus generate(const SynthSpec& spec, int workers = 1);

}  // namespace kyn

#endif  // KYN_SYNTH_HPP
