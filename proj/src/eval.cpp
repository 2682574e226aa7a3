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

#include "kyn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <unordered_map>

#include "kyn/error.hpp"
#include "kyn/parallel.hpp"
#include "kyn/rng.hpp"

namespace kyn {

using nlohmann::json;

namespace {

constexpr size_t kEmbedChunk = 256;
constexpr uint64_t kPoolStream = 0x706f6f6cULL;

std::string arch_key(const CompileLabel& label) { return label.architecture + "/" + std::to_string(label.bitness); }

void check_ranks(std::span<const size_t> ranks) {
  if (ranks.empty()) throw Error(ErrorCode::kInvalidArgument, "metrics need at least one rank");
  for (size_t r : ranks) {
    if (r == 0) throw Error(ErrorCode::kInvalidArgument, "ranks are 1-based");
  }
}

// Records grouped by identity within one task partition.
struct Partition {
  std::vector<std::string_view> identities;
  std::unordered_map<std::string_view, size_t> slot;
  std::vector<std::vector<size_t>> records;
};

}  // namespace

const char* task_name(Task task) { return task == Task::kXM ? "xm" : "xc"; }

Task parse_task(std::string_view name) {
  if (name == "xm" || name == "XM") return Task::kXM;
  if (name == "xc" || name == "XC") return Task::kXC;
  throw Error(ErrorCode::kValidation, "unknown task '" + std::string(name) + "' (expected xm or xc)");
}

// ---------------------------------------------------------------------------
// Pools

std::vector<SearchPool> build_search_pools(const Corpus& corpus, size_t pool_size, Task task, size_t num_pools,
                                           uint64_t seed, std::span<const size_t> query_records) {
  if (pool_size < 2) throw Error(ErrorCode::kValidation, "pool size must be at least 2");
  if (num_pools == 0) throw Error(ErrorCode::kValidation, "need at least one pool");

  std::map<std::string, Partition> parts;
  std::vector<std::string> key_of(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = corpus.records[i];
    key_of[i] = task == Task::kXC ? arch_key(rec.label) : std::string("*");
    Partition& p = parts[key_of[i]];
    auto [it, inserted] = p.slot.try_emplace(rec.function_id, p.identities.size());
    if (inserted) {
      p.identities.push_back(rec.function_id);
      p.records.emplace_back();
    }
    p.records[it->second].push_back(i);
  }

  std::vector<size_t> queries;
  if (query_records.empty()) {
    queries.resize(corpus.size());
    std::iota(queries.begin(), queries.end(), size_t{0});
  } else {
    for (size_t q : query_records) {
      if (q >= corpus.size()) throw Error(ErrorCode::kInvalidArgument, "query record index out of range");
      queries.push_back(q);
    }
  }
  // A query needs a second record of its identity in its partition.
  std::erase_if(queries, [&](size_t q) {
    const Partition& p = parts.at(key_of[q]);
    return p.records[p.slot.at(corpus.records[q].function_id)].size() < 2;
  });
  if (queries.empty()) {
    throw Error(ErrorCode::kValidation, std::string("no query has a positive (another record of the same function") +
                                            (task == Task::kXC ? " with the same architecture and bitness)" : ")"));
  }

  Rng rng(derive_seed(seed, kPoolStream));
  std::vector<SearchPool> pools(num_pools);
  for (auto& pool : pools) {
    pool.task = task;
    pool.query = queries[rng.uniform_index(queries.size())];
    const Partition& p = parts.at(key_of[pool.query]);
    const size_t own = p.slot.at(corpus.records[pool.query].function_id);
    const auto& same = p.records[own];
    if (p.identities.size() - 1 < pool_size - 1) {
      throw Error(ErrorCode::kValidation,
                  "pool size " + std::to_string(pool_size) + " needs " + std::to_string(pool_size - 1) +
                      " negative identities but only " + std::to_string(p.identities.size() - 1) + " are available" +
                      (task == Task::kXC ? " for " + key_of[pool.query] : std::string()));
    }
    // Uniform over the identity's other records.
    size_t pos = 0;
    for (size_t k = rng.uniform_index(same.size() - 1), seen = 0; size_t r : same) {
      if (r == pool.query) continue;
      if (seen++ == k) {
        pos = r;
        break;
      }
    }
    pool.candidates.reserve(pool_size);
    pool.candidates.push_back(pos);
    for (size_t pick : rng.sample_without_replacement(p.identities.size() - 1, pool_size - 1)) {
      const size_t identity = pick >= own ? pick + 1 : pick;
      const auto& rs = p.records[identity];
      pool.candidates.push_back(rs[rng.uniform_index(rs.size())]);
    }
    rng.shuffle(pool.candidates);
    pool.positive = static_cast<size_t>(std::find(pool.candidates.begin(), pool.candidates.end(), pos) -
                                        pool.candidates.begin());
  }
  return pools;
}

std::vector<size_t> rank_pool(std::span<const float> query, const Matrix<float>& candidates) {
  if (static_cast<Eigen::Index>(query.size()) != candidates.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "rank_pool: query and candidate dimensions differ");
  }
  std::vector<double> sims(static_cast<size_t>(candidates.rows()));
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < candidates.cols(); ++c) s += static_cast<double>(query[c]) * candidates(i, c);
    sims[static_cast<size_t>(i)] = s;
  }
  std::vector<size_t> order(sims.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return sims[a] > sims[b]; });
  return order;
}

// ---------------------------------------------------------------------------
// Metrics

double recall_at_1(std::span<const size_t> ranks) {
  check_ranks(ranks);
  const auto hits = std::count(ranks.begin(), ranks.end(), size_t{1});
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr_at_10(std::span<const size_t> ranks) {
  check_ranks(ranks);
  double total = 0.0;
  for (size_t r : ranks) total += r <= 10 ? 1.0 / static_cast<double>(r) : 0.0;
  return total / static_cast<double>(ranks.size());
}

double ndcg_at_10(std::span<const size_t> ranks) {
  check_ranks(ranks);
  double total = 0.0;
  for (size_t r : ranks) total += r <= 10 ? 1.0 / std::log2(static_cast<double>(r) + 1.0) : 0.0;
  return total / static_cast<double>(ranks.size());
}

RankReport RankReport::from_ranks(std::vector<size_t> ranks) {
  check_ranks(ranks);
  RankReport out;
  out.ranks = std::move(ranks);
  out.mean = std::accumulate(out.ranks.begin(), out.ranks.end(), 0.0) / static_cast<double>(out.ranks.size());
  std::vector<size_t> sorted = out.ranks;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  out.median = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                          : 0.5 * (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2]));
  return out;
}

// ---------------------------------------------------------------------------
// Embedding and evaluation

Matrix<float> embed_corpus(const ModelParams<float>& params, const ModelConfig& config, const Corpus& corpus,
                           int workers) {
  Matrix<float> out(static_cast<Eigen::Index>(corpus.size()), config.embedding_dim);
  const size_t chunks = (corpus.size() + kEmbedChunk - 1) / kEmbedChunk;
  parallel_for(chunks, workers, [&](size_t c) {
    const size_t begin = c * kEmbedChunk;
    const size_t end = std::min(corpus.size(), begin + kEmbedChunk);
    std::vector<const CallGraphlet*> graphlets;
    for (size_t i = begin; i < end; ++i) graphlets.push_back(&corpus.records[i].graphlet);
    const Matrix<float> e = embed(params, config, GraphBatch::from_graphlets(graphlets, config.use_edge_weights));
    out.middleRows(static_cast<Eigen::Index>(begin), e.rows()) = e;
  });
  return out;
}

json MetricsReport::to_json() const {
  return json{{"pool_size", pool_size},   {"num_pools", num_pools}, {"task", task_name(task)},
              {"recall_at_1", recall_at_1}, {"mrr_at_10", mrr_at_10}, {"ndcg_at_10", ndcg_at_10},
              {"seed", seed},             {"config", config}};
}

std::vector<json> MetricsReport::to_records(const std::string& checkpoint) const {
  std::vector<json> out;
  for (const auto& [metric, value] : {std::pair{"recall_at_1", recall_at_1}, std::pair{"mrr_at_10", mrr_at_10},
                                      std::pair{"ndcg_at_10", ndcg_at_10}}) {
    out.push_back(json{{"pool_size", pool_size},
                       {"metric", metric},
                       {"value", value},
                       {"seed", seed},
                       {"model_checkpoint", checkpoint},
                       {"task", task_name(task)}});
  }
  return out;
}

std::vector<size_t> pool_ranks(const Matrix<float>& embeddings, std::span<const SearchPool> pools, int workers) {
  std::vector<size_t> ranks(pools.size());
  parallel_for(pools.size(), workers, [&](size_t i) {
    const SearchPool& pool = pools[i];
    Matrix<float> cand(static_cast<Eigen::Index>(pool.candidates.size()), embeddings.cols());
    for (size_t k = 0; k < pool.candidates.size(); ++k) {
      cand.row(static_cast<Eigen::Index>(k)) = embeddings.row(static_cast<Eigen::Index>(pool.candidates[k]));
    }
    const RowVector<float> q = embeddings.row(static_cast<Eigen::Index>(pool.query));
    const auto order = rank_pool(std::span<const float>(q.data(), static_cast<size_t>(q.size())), cand);
    ranks[i] = static_cast<size_t>(std::find(order.begin(), order.end(), pool.positive) - order.begin()) + 1;
  });
  return ranks;
}

MetricsReport evaluate_pools(const Matrix<float>& embeddings, std::span<const SearchPool> pools, uint64_t seed,
                             int workers) {
  if (pools.empty()) throw Error(ErrorCode::kInvalidArgument, "no pools to evaluate");
  const auto ranks = pool_ranks(embeddings, pools, workers);
  MetricsReport r;
  r.pool_size = pools.front().candidates.size();
  r.num_pools = pools.size();
  r.task = pools.front().task;
  r.recall_at_1 = recall_at_1(ranks);
  r.mrr_at_10 = mrr_at_10(ranks);
  r.ndcg_at_10 = ndcg_at_10(ranks);
  r.seed = seed;
  return r;
}

std::vector<MetricsReport> evaluate(const ModelParams<float>& params, const ModelConfig& config, const Corpus& corpus,
                                    std::span<const size_t> pool_sizes, Task task, size_t num_pools, uint64_t seed,
                                    int workers, std::span<const size_t> query_records) {
  if (pool_sizes.empty()) throw Error(ErrorCode::kValidation, "no pool sizes given");
  // Fail on unsatisfiable pools before paying for embedding.
  std::vector<std::vector<SearchPool>> all;
  for (size_t n : pool_sizes) {
    all.push_back(build_search_pools(corpus, n, task, num_pools, derive_seed(seed, n), query_records));
  }
  const Matrix<float> emb = embed_corpus(params, config, corpus, workers);
  std::vector<MetricsReport> out;
  for (const auto& pools : all) {
    MetricsReport r = evaluate_pools(emb, pools, seed, workers);
    r.config = config.to_json();
    out.push_back(std::move(r));
  }
  return out;
}

std::string render_metrics_table(std::span<const MetricsReport> reports) {
  std::string out = "Task  Pool      Pools   R@1     MRR@10  NDCG@10\n";
  char line[128];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-5s %-9zu %-7zu %-7.4f %-7.4f %.4f\n", task_name(r.task), r.pool_size,
                  r.num_pools, r.recall_at_1, r.mrr_at_10, r.ndcg_at_10);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Search

namespace {

std::vector<std::pair<size_t, double>> ranked_against(const ModelParams<float>& params, const ModelConfig& config,
                                                      const CorpusRecord& query, const Corpus& index, int workers) {
  const Matrix<float> q = embed(params, config, GraphBatch::from_graphlet(query.graphlet, config.use_edge_weights));
  const Matrix<float> emb = embed_corpus(params, config, index, workers);
  std::vector<size_t> keep;
  for (size_t i = 0; i < index.size(); ++i) {
    const auto& rec = index.records[i];
    if (rec.function_id == query.function_id && rec.label == query.label) continue;
    keep.push_back(i);
  }
  Matrix<float> cand(static_cast<Eigen::Index>(keep.size()), emb.cols());
  for (size_t k = 0; k < keep.size(); ++k) cand.row(static_cast<Eigen::Index>(k)) = emb.row(static_cast<Eigen::Index>(keep[k]));
  const auto order = rank_pool(std::span<const float>(q.data(), static_cast<size_t>(q.cols())), cand);
  std::vector<std::pair<size_t, double>> out;
  out.reserve(order.size());
  for (size_t k : order) {
    out.emplace_back(keep[k], static_cast<double>((cand.row(static_cast<Eigen::Index>(k)).cast<double>() *
                                                   q.row(0).cast<double>().transpose())(0, 0)));
  }
  return out;
}

}  // namespace

std::vector<SearchHit> search(const ModelParams<float>& params, const ModelConfig& config, const CorpusRecord& query,
                              const Corpus& index, size_t k, int workers) {
  const auto ranked = ranked_against(params, config, query, index, workers);
  std::vector<SearchHit> hits;
  for (size_t i = 0; i < std::min(k, ranked.size()); ++i) hits.push_back({ranked[i].first, ranked[i].second});
  return hits;
}

size_t vulnerability_rank(const ModelParams<float>& params, const ModelConfig& config, const CorpusRecord& query,
                          std::string_view target_id, const Corpus& candidates, int workers) {
  const auto ranked = ranked_against(params, config, query, candidates, workers);
  for (size_t i = 0; i < ranked.size(); ++i) {
    if (candidates.records[ranked[i].first].function_id == target_id) return i + 1;
  }
  throw Error(ErrorCode::kNotFound, "target '" + std::string(target_id) + "' is not among the candidates");
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationVariant> standard_variants(const ModelConfig& base) {
  ModelConfig full = base;
  full.use_edge_weights = true;
  ModelConfig ne = base;
  ne.use_edge_weights = false;
  ModelConfig nes = ne;
  nes.aggregation = Aggregation::kAdd;
  return {{"KYN", full}, {"KYN-NE", ne}, {"KYN-NES", nes}};
}

std::vector<AblationRow> run_ablation(const Corpus& train_corpus, const Corpus& eval_corpus,
                                      std::span<const AblationVariant> variants, const TrainConfig& train_config,
                                      const AblationOptions& options) {
  if (variants.empty()) throw Error(ErrorCode::kValidation, "no ablation variants given");
  // Same pools for every variant.
  const auto pools = build_search_pools(eval_corpus, options.pool_size, options.task, options.num_pools,
                                        derive_seed(options.seed, options.pool_size), options.query_records);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    if (options.progress) options.progress("training " + v.name);
    TrainOptions topt;
    topt.progress = options.progress;
    if (options.checkpoint_dir) topt.checkpoint_dir = *options.checkpoint_dir / v.name;
    TrainResult trained = train(train_corpus, v.model_config, train_config, topt);
    const Matrix<float> emb = embed_corpus(trained.params, v.model_config, eval_corpus, options.workers);
    const MetricsReport r = evaluate_pools(emb, pools, options.seed, options.workers);
    AblationRow row{v.name, r.mrr_at_10, r.recall_at_1, std::nullopt};
    if (!trained.checkpoints.empty()) row.checkpoint = trained.checkpoints.back();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_ablation_table(std::span<const AblationRow> rows) {
  std::string out = "Setting   MRR@10  R@1\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-9s %-7.2f %.2f\n", r.name.c_str(), r.mrr_at_10, r.recall_at_1);
    out += line;
  }
  return out;
}

}  // namespace kyn
