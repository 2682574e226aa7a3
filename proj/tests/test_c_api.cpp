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

// Exercises the shared library through its C header only.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "kyn/kyn.h"

using nlohmann::json;

namespace {

struct CorpusDeleter {
  void operator()(kyn_corpus* c) const { kyn_corpus_free(c); }
};
struct ModelDeleter {
  void operator()(kyn_model* m) const { kyn_model_free(m); }
};
using CorpusPtr = std::unique_ptr<kyn_corpus, CorpusDeleter>;
using ModelPtr = std::unique_ptr<kyn_model, ModelDeleter>;

json take_json(char* s) {
  REQUIRE(s != nullptr);
  json j = json::parse(s);
  kyn_string_free(s);
  return j;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kyn-capi-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

CorpusPtr synth(size_t identities, uint64_t seed) {
  kyn_corpus* c = nullptr;
  const std::string spec = json{{"num_identities", identities}, {"variants_per_identity", 3}, {"seed", seed}}.dump();
  REQUIRE(kyn_corpus_synthesize(spec.c_str(), 1, &c) == KYN_OK);
  REQUIRE(kyn_corpus_deduplicate(c, "binary") == KYN_OK);
  REQUIRE(kyn_corpus_augment(c) == KYN_OK);
  return CorpusPtr(c);
}

const char* kSmallModel = R"({"hidden_dim": 16, "embedding_dim": 8})";

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(kyn_version()) == "0.1.0");
  CHECK(std::string(kyn_status_name(KYN_OK)) == "ok");
  CHECK(std::string(kyn_status_name(KYN_ERR_STAGE_ORDER)).size() > 0);
  CHECK(std::string(kyn_status_name(static_cast<kyn_status>(99))) == "unknown");
}

TEST_CASE("errors set the last error message") {
  kyn_corpus* c = nullptr;
  CHECK(kyn_corpus_read("/nonexistent/file.jsonl", &c) == KYN_ERR_IO);
  CHECK(c == nullptr);
  CHECK(std::string(kyn_last_error()).find("/nonexistent/file.jsonl") != std::string::npos);
  CHECK(kyn_corpus_synthesize("{not json", 1, &c) == KYN_ERR_PARSE);
  CHECK(kyn_corpus_synthesize(R"({"num_identites": 3})", 1, &c) == KYN_ERR_VALIDATION);
  CHECK(kyn_corpus_size(nullptr, nullptr) == KYN_ERR_INVALID_ARGUMENT);
  size_t mean_ranks[] = {1, 2};
  double mean = 0, median = 0;
  CHECK(kyn_rank_report(mean_ranks, 2, &mean, &median) == KYN_OK);
  CHECK(std::string(kyn_last_error()).empty());
}

TEST_CASE("rank report through the C surface") {
  const size_t a[] = {1, 1, 1, 1};
  const size_t b[] = {8, 8, 347, 1};
  double mean = 0, median = 0;
  REQUIRE(kyn_rank_report(a, 4, &mean, &median) == KYN_OK);
  CHECK(mean == 1.0);
  CHECK(median == 1.0);
  REQUIRE(kyn_rank_report(b, 4, &mean, &median) == KYN_OK);
  CHECK(mean == 91.0);
  CHECK(median == 8.0);
  CHECK(kyn_rank_report(b, 0, &mean, &median) != KYN_OK);
}

TEST_CASE("corpus lifecycle") {
  kyn_corpus* raw = nullptr;
  REQUIRE(kyn_corpus_synthesize(R"({"num_identities": 30, "seed": 2})", 1, &raw) == KYN_OK);
  CorpusPtr c(raw);
  CHECK(kyn_corpus_augment(c.get()) == KYN_ERR_STAGE_ORDER);
  CHECK(kyn_corpus_deduplicate(c.get(), "everything") == KYN_ERR_VALIDATION);
  size_t before = 0;
  REQUIRE(kyn_corpus_size(c.get(), &before) == KYN_OK);
  CHECK(before == 60);  // failed stages leave the corpus intact
  REQUIRE(kyn_corpus_deduplicate(c.get(), "binary") == KYN_OK);
  REQUIRE(kyn_corpus_augment(c.get()) == KYN_OK);
  size_t n = 0;
  REQUIRE(kyn_corpus_size(c.get(), &n) == KYN_OK);
  CHECK(n > 0);
  char* s = nullptr;
  REQUIRE(kyn_corpus_info(c.get(), &s) == KYN_OK);
  const json info = take_json(s);
  CHECK(info["records"] == n);
  CHECK(info["identities"] == 30);
  CHECK(info["provenance"]["augmented"] == true);
  REQUIRE(kyn_corpus_record(c.get(), 0, &s) == KYN_OK);
  CHECK(take_json(s)["digest"].get<std::string>().size() == 32);
  CHECK(kyn_corpus_record(c.get(), n, &s) == KYN_ERR_INVALID_ARGUMENT);

  const auto dir = scratch("corpus");
  const auto path = (dir / "c.jsonl").string();
  REQUIRE(kyn_corpus_write(c.get(), path.c_str()) == KYN_OK);
  kyn_corpus* back = nullptr;
  REQUIRE(kyn_corpus_read(path.c_str(), &back) == KYN_OK);
  CorpusPtr b(back);
  const auto path2 = (dir / "d.jsonl").string();
  REQUIRE(kyn_corpus_write(b.get(), path2.c_str()) == KYN_OK);
  std::ifstream f1(path), f2(path2);
  CHECK(std::string(std::istreambuf_iterator<char>(f1), {}) == std::string(std::istreambuf_iterator<char>(f2), {}));

  kyn_corpus *train = nullptr, *test = nullptr;
  REQUIRE(kyn_corpus_split(c.get(), 10, 1, &train, &test) == KYN_OK);
  CorpusPtr tr(train), te(test);
  size_t a = 0, z = 0;
  kyn_corpus_size(tr.get(), &a);
  kyn_corpus_size(te.get(), &z);
  CHECK(a + z == n);
  REQUIRE(kyn_corpus_sample(c.get(), 5, 3) == KYN_OK);
  kyn_corpus_size(c.get(), &n);
  CHECK(n == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model init, save, load and embed") {
  kyn_model* m = nullptr;
  CHECK(kyn_model_init(R"({"hidden_dim": -1})", 1, &m) == KYN_ERR_VALIDATION);
  REQUIRE(kyn_model_init(kSmallModel, 1, &m) == KYN_OK);
  ModelPtr model(m);
  size_t dim = 0;
  REQUIRE(kyn_model_embedding_dim(model.get(), &dim) == KYN_OK);
  CHECK(dim == 8);
  char* s = nullptr;
  REQUIRE(kyn_model_config(model.get(), &s) == KYN_OK);
  CHECK(take_json(s)["hidden_dim"] == 16);

  const auto corpus = synth(20, 4);
  size_t n = 0;
  kyn_corpus_size(corpus.get(), &n);
  std::vector<float> emb(n * dim);
  CHECK(kyn_embed(model.get(), corpus.get(), 1, emb.data(), emb.size() - 1) == KYN_ERR_INVALID_ARGUMENT);
  REQUIRE(kyn_embed(model.get(), corpus.get(), 1, emb.data(), emb.size()) == KYN_OK);
  for (size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (size_t k = 0; k < dim; ++k) norm += double(emb[i * dim + k]) * emb[i * dim + k];
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
  }

  const auto dir = scratch("model");
  const auto path = (dir / "m.ckpt").string();
  REQUIRE(kyn_model_save(model.get(), path.c_str()) == KYN_OK);
  kyn_model* loaded = nullptr;
  REQUIRE(kyn_model_load(path.c_str(), &loaded) == KYN_OK);
  ModelPtr again(loaded);
  std::vector<float> emb2(n * dim);
  REQUIRE(kyn_embed(again.get(), corpus.get(), 2, emb2.data(), emb2.size()) == KYN_OK);
  CHECK(emb == emb2);
  CHECK(kyn_model_load((dir / "missing.ckpt").string().c_str(), &loaded) == KYN_ERR_IO);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train, evaluate, search and ablate") {
  const auto corpus = synth(60, 5);
  const char* train_cfg = R"({"restart_lengths": [2], "batch_size": 16, "epoch_size": 64, "seed": 3})";
  std::vector<std::string> progress;
  auto sink = [](const char* msg, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(msg); };
  kyn_model* m = nullptr;
  char* summary = nullptr;
  REQUIRE(kyn_train(corpus.get(), kSmallModel, train_cfg, nullptr, sink, &progress, &m, &summary) == KYN_OK);
  ModelPtr model(m);
  const json sum = take_json(summary);
  CHECK(sum["steps"] == 8);
  CHECK(sum["epochs"].size() == 2);
  CHECK(progress.size() >= 2);
  CHECK(kyn_train(corpus.get(), kSmallModel, R"({"restart_lengths": [2], "epochs": 3})", nullptr, nullptr, nullptr,
                  &m, nullptr) == KYN_ERR_VALIDATION);

  char* out = nullptr;
  REQUIRE(kyn_evaluate(model.get(), corpus.get(), R"({"pool_sizes": [5, 20], "num_pools": 30, "seed": 1,
      "checkpoint": "x.ckpt"})", &out) == KYN_OK);
  const json ev = take_json(out);
  CHECK(ev["reports"].size() == 2);
  CHECK(ev["records"].size() == 6);
  CHECK(ev["table"].get<std::string>().find("R@1") != std::string::npos);
  CHECK(kyn_evaluate(model.get(), corpus.get(), R"({"pool_sizes": [500]})", &out) == KYN_ERR_VALIDATION);
  CHECK(std::string(kyn_last_error()).find("negative identities") != std::string::npos);

  char* rec = nullptr;
  REQUIRE(kyn_corpus_record(corpus.get(), 0, &rec) == KYN_OK);
  const std::string fid = take_json(rec)["function_id"];
  REQUIRE(kyn_search(model.get(), corpus.get(), fid.c_str(), nullptr, corpus.get(), 4, 1, &out) == KYN_OK);
  const json hits = take_json(out);
  CHECK(hits["hits"].size() == 4);
  CHECK(kyn_search(model.get(), corpus.get(), "no::such", nullptr, corpus.get(), 4, 1, &out) == KYN_ERR_NOT_FOUND);
  size_t rank = 0;
  REQUIRE(kyn_vulnerability_rank(model.get(), corpus.get(), fid.c_str(), nullptr, fid.c_str(), corpus.get(), 1,
                                 &rank) == KYN_OK);
  CHECK(rank >= 1);

  REQUIRE(kyn_ablate(corpus.get(), corpus.get(), kSmallModel, train_cfg,
                     R"({"variants": ["KYN", "KYN-NE"], "pool_size": 5, "num_pools": 20})", nullptr, nullptr,
                     &out) == KYN_OK);
  const json ab = take_json(out);
  CHECK(ab["rows"].size() == 2);
  CHECK(ab["table"].get<std::string>().find("KYN-NE") != std::string::npos);
  CHECK(kyn_ablate(corpus.get(), corpus.get(), kSmallModel, train_cfg, R"({"variants": ["KYN-X"]})", nullptr, nullptr,
                   &out) == KYN_ERR_VALIDATION);
}
