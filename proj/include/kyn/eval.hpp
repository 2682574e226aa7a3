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

// Retrieval evaluation: search pools, ranking, R@1 / MRR@10 / NDCG@10,
// vulnerability ranks and the ablation comparison.

#ifndef KYN_EVAL_HPP
#define KYN_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kyn/dataset.hpp"
#include "kyn/model.hpp"
#include "kyn/training.hpp"

namespace kyn {

// XM: candidates from any compile configuration. XC: candidates share the
// query's architecture and bitness.
enum class Task { kXM, kXC };

const char* task_name(Task task);
Task parse_task(std::string_view name);

struct SearchPool {
  size_t query = 0;               // corpus record index
  std::vector<size_t> candidates;  // corpus record indices
  size_t positive = 0;            // position of the positive in candidates
  Task task = Task::kXM;
};

// Draws `num_pools` pools of `pool_size` candidates: one positive sharing the
// query's function_id and pool_size - 1 negatives, one record per distinct
// other identity. When `query_records` is non-empty queries are drawn only
// from those indices; candidates always come from the whole corpus.
// Throws Error(kValidation) naming the failed constraint.
std::vector<SearchPool> build_search_pools(const Corpus& corpus, size_t pool_size, Task task, size_t num_pools,
                                           uint64_t seed, std::span<const size_t> query_records = {});

// Candidate indices by descending dot product, ties by index.
std::vector<size_t> rank_pool(std::span<const float> query, const Matrix<float>& candidates);

// Ranks are 1-based. Throws Error(kInvalidArgument) on an empty list or a
// rank of 0.
double recall_at_1(std::span<const size_t> ranks);
double mrr_at_10(std::span<const size_t> ranks);
double ndcg_at_10(std::span<const size_t> ranks);

struct RankReport {
  std::vector<size_t> ranks;
  double mean = 0.0;
  double median = 0.0;

  static RankReport from_ranks(std::vector<size_t> ranks);
};

// Embeddings for every record, computed in fixed 256-graph chunks so the
// result does not depend on `workers`.
Matrix<float> embed_corpus(const ModelParams<float>& params, const ModelConfig& config, const Corpus& corpus,
                           int workers = 1);

struct MetricsReport {
  size_t pool_size = 0;
  size_t num_pools = 0;
  Task task = Task::kXM;
  double recall_at_1 = 0.0;
  double mrr_at_10 = 0.0;
  double ndcg_at_10 = 0.0;
  uint64_t seed = 0;
  nlohmann::json config;  // model config echo

  nlohmann::json to_json() const;
  // One {pool_size, metric, value, seed, model_checkpoint, task} object per
  // metric.
  std::vector<nlohmann::json> to_records(const std::string& checkpoint) const;
};

// 1-based rank of the positive in each pool.
std::vector<size_t> pool_ranks(const Matrix<float>& embeddings, std::span<const SearchPool> pools, int workers = 1);

MetricsReport evaluate_pools(const Matrix<float>& embeddings, std::span<const SearchPool> pools, uint64_t seed,
                             int workers = 1);

// Pools for each size are drawn with a seed derived from `seed` and the size.
std::vector<MetricsReport> evaluate(const ModelParams<float>& params, const ModelConfig& config, const Corpus& corpus,
                                    std::span<const size_t> pool_sizes, Task task, size_t num_pools, uint64_t seed,
                                    int workers = 1, std::span<const size_t> query_records = {});

std::string render_metrics_table(std::span<const MetricsReport> reports);

struct SearchHit {
  size_t record = 0;
  double similarity = 0.0;
};

// Top `k` records of `index` by similarity to `query`, excluding records
// identical to the query (same function_id and label).
std::vector<SearchHit> search(const ModelParams<float>& params, const ModelConfig& config, const CorpusRecord& query,
                              const Corpus& index, size_t k, int workers = 1);

// 1-based rank of the best-placed record with function_id `target_id` among
// `candidates` (records identical to the query are skipped). Throws
// Error(kNotFound) when the target is absent.
size_t vulnerability_rank(const ModelParams<float>& params, const ModelConfig& config, const CorpusRecord& query,
                          std::string_view target_id, const Corpus& candidates, int workers = 1);

struct AblationVariant {
  std::string name;
  ModelConfig model_config;
};

// KYN, KYN-NE (edge weights off) and KYN-NES (edge weights off, add
// aggregation) derived from `base`.
std::vector<AblationVariant> standard_variants(const ModelConfig& base);

struct AblationRow {
  std::string name;
  double mrr_at_10 = 0.0;
  double recall_at_1 = 0.0;
  std::optional<std::filesystem::path> checkpoint;
};

struct AblationOptions {
  size_t pool_size = 100;
  size_t num_pools = 1000;
  Task task = Task::kXM;
  uint64_t seed = 0;
  int workers = 1;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::vector<size_t> query_records;  // within the evaluation corpus
  std::function<void(const std::string&)> progress;
};

// Trains one model per variant on `train_corpus` and evaluates it on
// `eval_corpus`.
std::vector<AblationRow> run_ablation(const Corpus& train_corpus, const Corpus& eval_corpus,
                                      std::span<const AblationVariant> variants, const TrainConfig& train_config,
                                      const AblationOptions& options);

std::string render_ablation_table(std::span<const AblationRow> rows);

}  // namespace kyn

#endif  // KYN_EVAL_HPP
