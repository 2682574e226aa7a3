/*
 * Copyright 2026 The KYN Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/*
 * C interface to the KYN library.
 *
 * Every function returns a kyn_status. On failure the message for the calling
 * thread is available from kyn_last_error() until the next call on that
 * thread. Strings returned through char** out-parameters are heap-allocated
 * and must be released with kyn_string_free(). Configuration and reports are
 * exchanged as JSON text.
 */

#ifndef KYN_KYN_H
#define KYN_KYN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KYN_API __declspec(dllexport)
#else
#define KYN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kyn_status {
  KYN_OK = 0,
  KYN_ERR_INVALID_ARGUMENT = 1,
  KYN_ERR_PARSE = 2,
  KYN_ERR_VALIDATION = 3,
  KYN_ERR_NOT_FOUND = 4,
  KYN_ERR_STAGE_ORDER = 5,
  KYN_ERR_UNSUPPORTED_FORMAT = 6,
  KYN_ERR_IO = 7,
  KYN_ERR_STRUCTURAL = 8,
  KYN_ERR_NUMERIC = 9,
  KYN_ERR_INTERNAL = 10
} kyn_status;

typedef struct kyn_corpus kyn_corpus;
typedef struct kyn_model kyn_model;

/* Receives progress lines; `user` is passed through unchanged. */
typedef void (*kyn_progress_fn)(const char* message, void* user);

KYN_API const char* kyn_version(void);
KYN_API const char* kyn_status_name(kyn_status status);
KYN_API const char* kyn_last_error(void);
KYN_API void kyn_string_free(char* s);

/* ---- Corpus ------------------------------------------------------------ */

KYN_API kyn_status kyn_corpus_build(const char* manifest_path, int workers, kyn_corpus** out);
/* spec_json: synthetic corpus spec; NULL or "" for defaults. */
KYN_API kyn_status kyn_corpus_synthesize(const char* spec_json, int workers, kyn_corpus** out);
KYN_API kyn_status kyn_corpus_read(const char* path, kyn_corpus** out);
KYN_API kyn_status kyn_corpus_write(const kyn_corpus* corpus, const char* path);
KYN_API void kyn_corpus_free(kyn_corpus* corpus);

KYN_API kyn_status kyn_corpus_size(const kyn_corpus* corpus, size_t* out);
/* {records, identities, provenance} */
KYN_API kyn_status kyn_corpus_info(const kyn_corpus* corpus, char** out_json);
/* {function_id, label, digest} of one record. */
KYN_API kyn_status kyn_corpus_record(const kyn_corpus* corpus, size_t index, char** out_json);

/*
 * Pipeline stages, applied in place. A failing stage leaves the corpus as it
 * was. scope: "binary", "global" or "none".
 */
KYN_API kyn_status kyn_corpus_deduplicate(kyn_corpus* corpus, const char* scope);
KYN_API kyn_status kyn_corpus_augment(kyn_corpus* corpus);
KYN_API kyn_status kyn_corpus_sample(kyn_corpus* corpus, size_t n, uint64_t seed);
KYN_API kyn_status kyn_corpus_split(const kyn_corpus* corpus, size_t holdout_identities, uint64_t seed,
                                    kyn_corpus** train, kyn_corpus** test);

/* ---- Model ------------------------------------------------------------- */

/* config_json: model config; NULL or "" for defaults. */
KYN_API kyn_status kyn_model_init(const char* config_json, uint64_t seed, kyn_model** out);
KYN_API kyn_status kyn_model_load(const char* checkpoint_path, kyn_model** out);
KYN_API kyn_status kyn_model_save(const kyn_model* model, const char* checkpoint_path);
KYN_API void kyn_model_free(kyn_model* model);
KYN_API kyn_status kyn_model_config(const kyn_model* model, char** out_json);
KYN_API kyn_status kyn_model_embedding_dim(const kyn_model* model, size_t* out);

/*
 * Trains a model. options_json keys (all optional): checkpoint_dir,
 * resume_from, metrics_log. summary_json receives {steps, epochs[],
 * checkpoints[]} when non-NULL.
 */
KYN_API kyn_status kyn_train(const kyn_corpus* corpus, const char* model_config_json, const char* train_config_json,
                             const char* options_json, kyn_progress_fn progress, void* user, kyn_model** out,
                             char** summary_json);

/* Writes size * embedding_dim floats, row-major, into `out`. */
KYN_API kyn_status kyn_embed(const kyn_model* model, const kyn_corpus* corpus, int workers, float* out,
                             size_t capacity);

/* ---- Retrieval --------------------------------------------------------- */

/*
 * Top-k neighbours of one record of `queries` within `index`. The query is
 * the first record whose function_id matches and, when binary_name is not
 * NULL, whose label carries that binary name. Result: {query, hits[]}.
 */
KYN_API kyn_status kyn_search(const kyn_model* model, const kyn_corpus* queries, const char* function_id,
                              const char* binary_name, const kyn_corpus* index, size_t top_k, int workers,
                              char** out_json);

/* 1-based rank of target_id among `index` for the selected query. */
KYN_API kyn_status kyn_vulnerability_rank(const kyn_model* model, const kyn_corpus* queries, const char* function_id,
                                          const char* binary_name, const char* target_id, const kyn_corpus* index,
                                          int workers, size_t* rank);

/* Mean and median of 1-based ranks. */
KYN_API kyn_status kyn_rank_report(const size_t* ranks, size_t count, double* mean, double* median);

/*
 * Search-pool evaluation. options_json keys: pool_sizes (array), task
 * ("xm"|"xc"), num_pools, seed, workers, query_function_ids (array,
 * optional), checkpoint (string echoed into records). Result: {reports[],
 * records[], table}.
 */
KYN_API kyn_status kyn_evaluate(const kyn_model* model, const kyn_corpus* corpus, const char* options_json,
                                char** out_json);

/*
 * Trains and evaluates the KYN, KYN-NE and KYN-NES variants (or the subset in
 * options "variants"). options_json keys: variants, pool_size, num_pools,
 * task, seed, workers, checkpoint_dir, query_function_ids. Result: {rows[],
 * table}.
 */
KYN_API kyn_status kyn_ablate(const kyn_corpus* train_corpus, const kyn_corpus* eval_corpus,
                              const char* model_config_json, const char* train_config_json, const char* options_json,
                              kyn_progress_fn progress, void* user, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* KYN_KYN_H */
