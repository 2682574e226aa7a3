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

// Checkpoint file layout:
//
//   "KYNCKPT\0"                 8-byte magic
//   u64 little-endian           manifest length in bytes
//   manifest                    UTF-8 JSON: format_version, model_config, seed,
//                               params [{name, shape, offset}], optional
//                               train_config and optimizer {step, next_epoch}
//   blob                        little-endian f32 values; offsets count floats
//
// Optimizer moments are stored as extra blocks named "adam.m.<param>" and
// "adam.v.<param>".

#ifndef KYN_CHECKPOINT_HPP
#define KYN_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "kyn/model.hpp"

namespace kyn {

inline constexpr int kCheckpointFormatVersion = 1;

struct OptimizerSnapshot {
  int64_t step = 0;
  int next_epoch = 0;
  ModelParams<float> first_moment;
  ModelParams<float> second_moment;
};

struct Checkpoint {
  ModelConfig model_config;
  ModelParams<float> params;
  uint64_t seed = 0;
  std::optional<nlohmann::json> train_config;
  std::optional<OptimizerSnapshot> optimizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Validates every block's shape against the stored model config. Throws
// Error(kUnsupportedFormat) for foreign files and Error(kStructural) for
// shape mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kyn

#endif  // KYN_CHECKPOINT_HPP
