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

// Metric learning: identity-aware batches, hardest-positive/hardest-negative
// mining, circle loss, Adam and a cosine schedule with warm restarts.

#ifndef KYN_TRAINING_HPP
#define KYN_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kyn/checkpoint.hpp"
#include "kyn/dataset.hpp"
#include "kyn/model.hpp"

namespace kyn {

struct TrainConfig {
  double margin = 0.25;
  double gamma = 256.0;
  double lr_max = 5e-4;
  double lr_min = 1e-4;
  std::vector<int> restart_lengths = {50, 100, 200};
  int epochs = 350;
  size_t epoch_size = 100000;
  size_t batch_size = 256;
  size_t versions_per_function = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;

  // Throws Error(kValidation).
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

// Learning rate for a 0-based epoch. Throws Error(kInvalidArgument) when the
// epoch is outside [0, epochs).
double lr_at(int epoch, const TrainConfig& config);

// Identities with fewer than versions_per_function records are skipped and
// reported through `warn` when given.
std::vector<std::vector<size_t>> make_epoch_batches(const Corpus& corpus, const TrainConfig& config, int epoch,
                                                    const std::function<void(const std::string&)>& warn = {});

struct MinedPair {
  int anchor = 0;
  int positive = 0;
  int negative = -1;  // -1 when the batch holds a single identity
  double s_p = 0.0;
  double s_n = 0.0;
};

// Per anchor: the least similar same-identity embedding and the most similar
// other-identity embedding (cosine similarity, i.e. dot products of unit
// rows). Anchors without a positive are left out. Ties go to the lowest index.
template <typename T>
std::vector<MinedPair> batch_hard_mine(const Matrix<T>& embeddings, std::span<const int> labels);

struct CircleLossResult {
  double loss = 0.0;  // mean over pairs that have a negative
  std::vector<double> d_sp;  // d loss / d s_p per pair
  std::vector<double> d_sn;
};

// softplus(gamma * a_n (s_n - m) - gamma * a_p (s_p - 1 + m)) with
// a_p = max(0, 1 + m - s_p), a_n = max(0, s_n + m) held constant for the
// gradient.
double circle_loss_term(double s_p, double s_n, double margin, double gamma);
CircleLossResult circle_loss(std::span<const MinedPair> pairs, double margin, double gamma);

class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams<float>& like, double beta1, double beta2, double eps);

  // Throws Error(kNumeric) naming the block when a gradient is not finite;
  // params and state are left untouched in that case.
  void step(ModelParams<float>& params, const ModelParams<float>& grads, double lr);

  int64_t steps() const { return step_; }
  OptimizerSnapshot snapshot(int next_epoch) const;
  void restore(const OptimizerSnapshot& snapshot);

 private:
  double beta1_;
  double beta2_;
  double eps_;
  int64_t step_ = 0;
  ModelParams<float> m_;
  ModelParams<float> v_;
};

struct StepRecord {
  int epoch = 0;
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  size_t batches = 0;
};

struct TrainOptions {
  // Checkpoints go here at every restart boundary and at the end when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> resume_from;
  // Line-delimited {epoch, step, loss, lr} records.
  std::optional<std::filesystem::path> metrics_log;
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  std::vector<std::filesystem::path> checkpoints;
};

// Loss and parameter gradients for one batch of corpus indices.
struct BatchLoss {
  double loss = 0.0;
  size_t pairs = 0;
  ModelParams<float> grads;
};
BatchLoss batch_loss_and_grads(const ModelParams<float>& params, const ModelConfig& model_config,
                               const TrainConfig& train_config, const Corpus& corpus, std::span<const size_t> batch);

TrainResult train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainOptions& options = {});

}  // namespace kyn

#endif  // KYN_TRAINING_HPP
