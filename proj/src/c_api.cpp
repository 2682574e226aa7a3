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

#include "kyn/kyn.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <set>
#include <string>

#include "kyn/checkpoint.hpp"
#include "kyn/dataset.hpp"
#include "kyn/error.hpp"
#include "kyn/eval.hpp"
#include "kyn/model.hpp"
#include "kyn/synth.hpp"
#include "kyn/training.hpp"

struct kyn_corpus {
  kyn::Corpus corpus;
};

struct kyn_model {
  kyn::ModelConfig config;
  kyn::ModelParams<float> params;
  uint64_t seed = 0;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

kyn_status fail(kyn_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs `fn`, mapping exceptions onto status codes.
template <typename Fn>
kyn_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return KYN_OK;
  } catch (const kyn::Error& e) {
    return fail(static_cast<kyn_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(KYN_ERR_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(KYN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(KYN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(KYN_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw kyn::Error(kyn::ErrorCode::kInvalidArgument, std::string(what) + " must not be null");
}

json parse_json_arg(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw kyn::Error(kyn::ErrorCode::kParse,
                     std::string(what) + ": malformed JSON at byte " + std::to_string(e.byte));
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json label_json(const kyn::CompileLabel& l) {
  return json{{"project", l.project},   {"binary_name", l.binary_name},           {"architecture", l.architecture},
              {"bitness", l.bitness},   {"compiler", l.compiler},                 {"compiler_version", l.compiler_version},
              {"optimization", l.optimization}};
}

json record_json(const kyn::CorpusRecord& r) {
  return json{{"function_id", r.function_id}, {"label", label_json(r.label)}, {"digest", r.digest.hex()}};
}

const kyn::CorpusRecord& find_query(const kyn::Corpus& corpus, const char* function_id, const char* binary_name) {
  for (const auto& rec : corpus.records) {
    if (rec.function_id != function_id) continue;
    if (binary_name != nullptr && rec.label.binary_name != binary_name) continue;
    return rec;
  }
  std::string msg = "query function '" + std::string(function_id) + "'";
  if (binary_name != nullptr) msg += " in binary '" + std::string(binary_name) + "'";
  throw kyn::Error(kyn::ErrorCode::kNotFound, msg + " not found");
}

std::vector<size_t> query_indices(const kyn::Corpus& corpus, const json& options) {
  std::vector<size_t> out;
  if (!options.contains("query_function_ids")) return out;
  const auto ids = options["query_function_ids"].get<std::set<std::string>>();
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (ids.contains(corpus.records[i].function_id)) out.push_back(i);
  }
  if (out.empty()) throw kyn::Error(kyn::ErrorCode::kValidation, "none of the query function ids occur in the corpus");
  return out;
}

std::function<void(const std::string&)> progress_sink(kyn_progress_fn progress, void* user) {
  if (progress == nullptr) return {};
  return [progress, user](const std::string& msg) { progress(msg.c_str(), user); };
}

}  // namespace

extern "C" {

const char* kyn_version(void) { return "0.1.0"; }

const char* kyn_status_name(kyn_status status) {
  if (status == KYN_OK) return "ok";
  if (status < KYN_ERR_INVALID_ARGUMENT || status > KYN_ERR_INTERNAL) return "unknown";
  return kyn::error_code_name(static_cast<kyn::ErrorCode>(status));
}

const char* kyn_last_error(void) { return g_last_error.c_str(); }

void kyn_string_free(char* s) { std::free(s); }

// ---- Corpus -----------------------------------------------------------------

kyn_status kyn_corpus_build(const char* manifest_path, int workers, kyn_corpus** out) {
  return guarded([&] {
    require(manifest_path && out, "manifest_path and out");
    *out = new kyn_corpus{kyn::build_corpus(manifest_path, workers)};
  });
}

kyn_status kyn_corpus_synthesize(const char* spec_json, int workers, kyn_corpus** out) {
  return guarded([&] {
    require(out, "out");
    const auto spec = kyn::SynthSpec::from_json(parse_json_arg(spec_json, "synth spec"));
    *out = new kyn_corpus{kyn::generate(spec, workers)};
  });
}

kyn_status kyn_corpus_read(const char* path, kyn_corpus** out) {
  return guarded([&] {
    require(path && out, "path and out");
    *out = new kyn_corpus{kyn::read_corpus(path)};
  });
}

kyn_status kyn_corpus_write(const kyn_corpus* corpus, const char* path) {
  return guarded([&] {
    require(corpus && path, "corpus and path");
    kyn::write_corpus(corpus->corpus, path);
  });
}

void kyn_corpus_free(kyn_corpus* corpus) { delete corpus; }

kyn_status kyn_corpus_size(const kyn_corpus* corpus, size_t* out) {
  return guarded([&] {
    require(corpus && out, "corpus and out");
    *out = corpus->corpus.size();
  });
}

kyn_status kyn_corpus_info(const kyn_corpus* corpus, char** out_json) {
  return guarded([&] {
    require(corpus && out_json, "corpus and out_json");
    const auto& c = corpus->corpus;
    std::set<std::string_view> ids;
    for (const auto& r : c.records) ids.insert(r.function_id);
    json prov{{"sources", c.provenance.sources},
              {"augmented", c.provenance.augmented},
              {"dedup", c.provenance.dedup ? json(kyn::dedup_scope_name(*c.provenance.dedup)) : json(nullptr)}};
    prov["sampled"] = c.provenance.sampled
                          ? json{{"n", c.provenance.sampled->n}, {"seed", c.provenance.sampled->seed}}
                          : json(nullptr);
    *out_json = dup_string(json{{"records", c.size()}, {"identities", ids.size()}, {"provenance", prov}}.dump());
  });
}

kyn_status kyn_corpus_record(const kyn_corpus* corpus, size_t index, char** out_json) {
  return guarded([&] {
    require(corpus && out_json, "corpus and out_json");
    if (index >= corpus->corpus.size()) throw kyn::Error(kyn::ErrorCode::kInvalidArgument, "record index out of range");
    *out_json = dup_string(record_json(corpus->corpus.records[index]).dump());
  });
}

kyn_status kyn_corpus_deduplicate(kyn_corpus* corpus, const char* scope) {
  return guarded([&] {
    require(corpus && scope, "corpus and scope");
    corpus->corpus = kyn::deduplicate(corpus->corpus, kyn::parse_dedup_scope(scope));
  });
}

kyn_status kyn_corpus_augment(kyn_corpus* corpus) {
  return guarded([&] {
    require(corpus, "corpus");
    corpus->corpus = kyn::augment(corpus->corpus);
  });
}

kyn_status kyn_corpus_sample(kyn_corpus* corpus, size_t n, uint64_t seed) {
  return guarded([&] {
    require(corpus, "corpus");
    corpus->corpus = kyn::sample(corpus->corpus, n, seed);
  });
}

kyn_status kyn_corpus_split(const kyn_corpus* corpus, size_t holdout_identities, uint64_t seed, kyn_corpus** train,
                            kyn_corpus** test) {
  return guarded([&] {
    require(corpus && train && test, "corpus, train and test");
    auto [a, b] = kyn::split_by_identity(corpus->corpus, holdout_identities, seed);
    auto* first = new kyn_corpus{std::move(a)};
    try {
      *test = new kyn_corpus{std::move(b)};
    } catch (...) {
      delete first;
      throw;
    }
    *train = first;
  });
}

// ---- Model ------------------------------------------------------------------

kyn_status kyn_model_init(const char* config_json, uint64_t seed, kyn_model** out) {
  return guarded([&] {
    require(out, "out");
    const auto cfg = kyn::ModelConfig::from_json(parse_json_arg(config_json, "model config"));
    *out = new kyn_model{cfg, kyn::init_params(cfg, seed), seed};
  });
}

kyn_status kyn_model_load(const char* checkpoint_path, kyn_model** out) {
  return guarded([&] {
    require(checkpoint_path && out, "checkpoint_path and out");
    auto ckpt = kyn::load_checkpoint(checkpoint_path);
    *out = new kyn_model{ckpt.model_config, std::move(ckpt.params), ckpt.seed};
  });
}

kyn_status kyn_model_save(const kyn_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model && checkpoint_path, "model and checkpoint_path");
    kyn::Checkpoint ckpt;
    ckpt.model_config = model->config;
    ckpt.params = model->params;
    ckpt.seed = model->seed;
    kyn::save_checkpoint(ckpt, checkpoint_path);
  });
}

void kyn_model_free(kyn_model* model) { delete model; }

kyn_status kyn_model_config(const kyn_model* model, char** out_json) {
  return guarded([&] {
    require(model && out_json, "model and out_json");
    *out_json = dup_string(model->config.to_json().dump());
  });
}

kyn_status kyn_model_embedding_dim(const kyn_model* model, size_t* out) {
  return guarded([&] {
    require(model && out, "model and out");
    *out = static_cast<size_t>(model->config.embedding_dim);
  });
}

kyn_status kyn_train(const kyn_corpus* corpus, const char* model_config_json, const char* train_config_json,
                     const char* options_json, kyn_progress_fn progress, void* user, kyn_model** out,
                     char** summary_json) {
  return guarded([&] {
    require(corpus && out, "corpus and out");
    const auto mcfg = kyn::ModelConfig::from_json(parse_json_arg(model_config_json, "model config"));
    const auto tcfg = kyn::TrainConfig::from_json(parse_json_arg(train_config_json, "train config"));
    const json opts = parse_json_arg(options_json, "train options");
    kyn::TrainOptions options;
    for (const auto& [key, value] : opts.items()) {
      if (key == "checkpoint_dir") options.checkpoint_dir = value.get<std::string>();
      else if (key == "resume_from") options.resume_from = value.get<std::string>();
      else if (key == "metrics_log") options.metrics_log = value.get<std::string>();
      else throw kyn::Error(kyn::ErrorCode::kValidation, "train options: unknown key '" + key + "'");
    }
    options.progress = progress_sink(progress, user);
    auto result = kyn::train(corpus->corpus, mcfg, tcfg, options);
    if (summary_json != nullptr) {
      json epochs = json::array();
      for (const auto& e : result.epochs) {
        epochs.push_back(json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}, {"batches", e.batches}});
      }
      json ckpts = json::array();
      for (const auto& p : result.checkpoints) ckpts.push_back(p.string());
      *summary_json = dup_string(json{{"steps", result.steps.size()}, {"epochs", epochs}, {"checkpoints", ckpts}}.dump());
    }
    *out = new kyn_model{mcfg, std::move(result.params), tcfg.seed};
  });
}

kyn_status kyn_embed(const kyn_model* model, const kyn_corpus* corpus, int workers, float* out, size_t capacity) {
  return guarded([&] {
    require(model && corpus && out, "model, corpus and out");
    const size_t need = corpus->corpus.size() * static_cast<size_t>(model->config.embedding_dim);
    if (capacity < need) {
      throw kyn::Error(kyn::ErrorCode::kInvalidArgument,
                       "output buffer holds " + std::to_string(capacity) + " floats but " + std::to_string(need) +
                           " are needed");
    }
    const auto emb = kyn::embed_corpus(model->params, model->config, corpus->corpus, workers);
    std::memcpy(out, emb.data(), need * sizeof(float));
  });
}

// ---- Retrieval --------------------------------------------------------------

kyn_status kyn_search(const kyn_model* model, const kyn_corpus* queries, const char* function_id,
                      const char* binary_name, const kyn_corpus* index, size_t top_k, int workers, char** out_json) {
  return guarded([&] {
    require(model && queries && function_id && index && out_json, "model, queries, function_id, index and out_json");
    const auto& q = find_query(queries->corpus, function_id, binary_name);
    const auto hits = kyn::search(model->params, model->config, q, index->corpus, top_k, workers);
    json arr = json::array();
    size_t rank = 1;
    for (const auto& h : hits) {
      json item = record_json(index->corpus.records[h.record]);
      item["rank"] = rank++;
      item["similarity"] = h.similarity;
      arr.push_back(std::move(item));
    }
    *out_json = dup_string(json{{"query", record_json(q)}, {"hits", arr}}.dump());
  });
}

kyn_status kyn_vulnerability_rank(const kyn_model* model, const kyn_corpus* queries, const char* function_id,
                                  const char* binary_name, const char* target_id, const kyn_corpus* index,
                                  int workers, size_t* rank) {
  return guarded([&] {
    require(model && queries && function_id && target_id && index && rank,
            "model, queries, function_id, target_id, index and rank");
    const auto& q = find_query(queries->corpus, function_id, binary_name);
    *rank = kyn::vulnerability_rank(model->params, model->config, q, target_id, index->corpus, workers);
  });
}

kyn_status kyn_rank_report(const size_t* ranks, size_t count, double* mean, double* median) {
  return guarded([&] {
    require(ranks && mean && median, "ranks, mean and median");
    const auto r = kyn::RankReport::from_ranks(std::vector<size_t>(ranks, ranks + count));
    *mean = r.mean;
    *median = r.median;
  });
}

kyn_status kyn_evaluate(const kyn_model* model, const kyn_corpus* corpus, const char* options_json, char** out_json) {
  return guarded([&] {
    require(model && corpus && out_json, "model, corpus and out_json");
    const json opts = parse_json_arg(options_json, "evaluate options");
    const auto sizes = opts.value("pool_sizes", std::vector<size_t>{100});
    const auto task = kyn::parse_task(opts.value("task", std::string("xm")));
    const auto num_pools = opts.value("num_pools", size_t{1000});
    const auto seed = opts.value("seed", uint64_t{0});
    const int workers = opts.value("workers", 1);
    const auto checkpoint = opts.value("checkpoint", std::string());
    const auto queries = query_indices(corpus->corpus, opts);
    const auto reports =
        kyn::evaluate(model->params, model->config, corpus->corpus, sizes, task, num_pools, seed, workers, queries);
    json rep = json::array();
    json records = json::array();
    for (const auto& r : reports) {
      rep.push_back(r.to_json());
      for (auto& rec : r.to_records(checkpoint)) records.push_back(std::move(rec));
    }
    *out_json =
        dup_string(json{{"reports", rep}, {"records", records}, {"table", kyn::render_metrics_table(reports)}}.dump());
  });
}

kyn_status kyn_ablate(const kyn_corpus* train_corpus, const kyn_corpus* eval_corpus, const char* model_config_json,
                      const char* train_config_json, const char* options_json, kyn_progress_fn progress, void* user,
                      char** out_json) {
  return guarded([&] {
    require(train_corpus && eval_corpus && out_json, "train_corpus, eval_corpus and out_json");
    const auto base = kyn::ModelConfig::from_json(parse_json_arg(model_config_json, "model config"));
    const auto tcfg = kyn::TrainConfig::from_json(parse_json_arg(train_config_json, "train config"));
    const json opts = parse_json_arg(options_json, "ablation options");
    kyn::AblationOptions options;
    options.pool_size = opts.value("pool_size", size_t{100});
    options.num_pools = opts.value("num_pools", size_t{1000});
    options.task = kyn::parse_task(opts.value("task", std::string("xm")));
    options.seed = opts.value("seed", uint64_t{0});
    options.workers = opts.value("workers", 1);
    if (opts.contains("checkpoint_dir")) options.checkpoint_dir = opts["checkpoint_dir"].get<std::string>();
    options.query_records = query_indices(eval_corpus->corpus, opts);
    options.progress = progress_sink(progress, user);

    auto variants = kyn::standard_variants(base);
    if (opts.contains("variants")) {
      const auto wanted = opts["variants"].get<std::vector<std::string>>();
      std::vector<kyn::AblationVariant> picked;
      for (const auto& name : wanted) {
        auto it = std::find_if(variants.begin(), variants.end(), [&](const auto& v) { return v.name == name; });
        if (it == variants.end()) throw kyn::Error(kyn::ErrorCode::kValidation, "unknown ablation variant '" + name + "'");
        picked.push_back(*it);
      }
      variants = std::move(picked);
    }
    const auto rows = kyn::run_ablation(train_corpus->corpus, eval_corpus->corpus, variants, tcfg, options);
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back(json{{"setting", r.name},
                         {"mrr_at_10", r.mrr_at_10},
                         {"recall_at_1", r.recall_at_1},
                         {"pool_size", options.pool_size},
                         {"seed", options.seed},
                         {"task", kyn::task_name(options.task)},
                         {"model_checkpoint", r.checkpoint ? json(r.checkpoint->string()) : json(nullptr)}});
    }
    *out_json = dup_string(json{{"rows", arr}, {"table", kyn::render_ablation_table(rows)}}.dump());
  });
}

}  // extern "C"
