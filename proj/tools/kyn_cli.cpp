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

// kyn: command-line front end over the C interface.
//
//   kyn synth --out corpus.jsonl --identities 2000 --variants 4 --seed 7
//   kyn build-dataset --manifest m.json --out corpus.jsonl --dedup-scope binary
//   kyn train --corpus corpus.jsonl --out kyn.ckpt --epochs 30
//   kyn evaluate --corpus test.jsonl --checkpoint kyn.ckpt --pool-sizes 100,1000
//   kyn search --corpus index.jsonl --checkpoint kyn.ckpt --query-function f --top 10
//
// Exit status: 0 success, 1 invalid input, 2 runtime or numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kyn/kyn.h"

namespace {

using nlohmann::json;

constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  kyn_status status;
  std::string message;
};

int exit_code_for(kyn_status s) {
  switch (s) {
    case KYN_ERR_IO:
    case KYN_ERR_NUMERIC:
    case KYN_ERR_INTERNAL:
      return kExitRuntime;
    default:
      return kExitInvalid;
  }
}

void check(kyn_status s) {
  if (s != KYN_OK) throw Failure{s, kyn_last_error()};
}

void invalid(const std::string& message) { throw Failure{KYN_ERR_VALIDATION, message}; }

struct CorpusDeleter {
  void operator()(kyn_corpus* c) const { kyn_corpus_free(c); }
};
struct ModelDeleter {
  void operator()(kyn_model* m) const { kyn_model_free(m); }
};
using CorpusPtr = std::unique_ptr<kyn_corpus, CorpusDeleter>;
using ModelPtr = std::unique_ptr<kyn_model, ModelDeleter>;

// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  kyn_string_free(s);
  return out;
}

CorpusPtr read_corpus(const std::string& path) {
  kyn_corpus* c = nullptr;
  check(kyn_corpus_read(path.c_str(), &c));
  return CorpusPtr(c);
}

ModelPtr load_model(const std::string& path) {
  kyn_model* m = nullptr;
  check(kyn_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

void write_corpus(const kyn_corpus* c, const std::string& path) { check(kyn_corpus_write(c, path.c_str())); }

json corpus_info(const kyn_corpus* c) {
  char* s = nullptr;
  check(kyn_corpus_info(c, &s));
  return json::parse(take(s));
}

void progress_to_stderr(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{KYN_ERR_IO, "cannot open '" + path + "' for writing"};
  out << text;
  if (!out) throw Failure{KYN_ERR_IO, "failed writing '" + path + "'"};
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Global options shared by every subcommand.
struct Common {
  uint64_t seed = 0;
  int workers = 0;
  std::string format = "text";
  std::string config_path;
  json config = json::object();

  // Section of the config file overlay, or an empty object.
  json section(const char* name) const {
    if (config.contains(name)) {
      if (!config[name].is_object()) invalid(std::string("config section '") + name + "' must be an object");
      return config[name];
    }
    return json::object();
  }
};

// Records a flag into a JSON section only when it was given on the command
// line, so config-file values survive unless overridden.
template <typename T>
void overlay(json& section, const char* key, const CLI::Option* opt, const T& value) {
  if (opt->count() > 0) section[key] = value;
}

std::vector<std::string> query_ids(const std::string& path) {
  if (path.empty()) return {};
  auto c = read_corpus(path);
  size_t n = 0;
  check(kyn_corpus_size(c.get(), &n));
  std::vector<std::string> ids;
  for (size_t i = 0; i < n; ++i) {
    char* s = nullptr;
    check(kyn_corpus_record(c.get(), i, &s));
    ids.push_back(json::parse(take(s)).at("function_id").get<std::string>());
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KYN: call-graphlet function similarity search"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "Seed for every random choice")->envname("KYN_SEED");
  app.add_option("--workers", common.workers, "Worker threads (0 = available cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--format", common.format, "Output format")->check(CLI::IsMember({"text", "jsonl"}));
  app.add_option("--config", common.config_path, "JSON config overlay with synth/model/train/evaluate sections")
      ->check(CLI::ExistingFile);

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "Build a corpus from disassembler exports");
  std::string manifest, build_out, dedup_scope = "binary";
  size_t sample_n = 0;
  bool no_augment = false;
  build->add_option("--manifest", manifest, "Manifest of exports and labels")->required()->check(CLI::ExistingFile);
  build->add_option("--out", build_out, "Corpus output path")->required();
  build->add_option("--dedup-scope", dedup_scope)->check(CLI::IsMember({"binary", "global", "none"}));
  build->add_flag("--no-augment", no_augment, "Skip edge-betweenness augmentation");
  build->add_option("--sample", sample_n, "Keep a random subset of this many records");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  std::string synth_out, synth_test_out;
  size_t identities = 0, variants = 0, holdout = 0;
  std::string architectures;
  double noise = 0, dropout = 0;
  bool raw = false;
  synth->add_option("--out", synth_out, "Corpus output path (training part when --holdout is set)")->required();
  auto* o_ident = synth->add_option("--identities", identities)->check(CLI::PositiveNumber);
  auto* o_var = synth->add_option("--variants", variants)->check(CLI::PositiveNumber);
  auto* o_arch = synth->add_option("--architectures", architectures, "Comma-separated list");
  auto* o_noise = synth->add_option("--noise", noise, "Log-space feature noise")->check(CLI::NonNegativeNumber);
  auto* o_drop = synth->add_option("--dropout", dropout, "Edge dropout probability")->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--raw", raw, "Write the corpus without dedup and augmentation");
  synth->add_option("--holdout", holdout, "Identities to hold out");
  synth->add_option("--test-out", synth_test_out, "Held-out corpus output path");

  // train
  auto* trn = app.add_subcommand("train", "Train an embedding model");
  std::string train_corpus, train_out, ckpt_dir, resume, metrics_log, restarts;
  int epochs = 0, hidden = 0, embedding = 0, layers = 0;
  size_t epoch_size = 0, batch_size = 0;
  double lr_max = 0, lr_min = 0;
  std::string aggregation;
  bool no_edge_weights = false;
  trn->add_option("--corpus", train_corpus)->required()->check(CLI::ExistingFile);
  trn->add_option("--out", train_out, "Final checkpoint path")->required();
  trn->add_option("--checkpoint-dir", ckpt_dir, "Directory for restart-boundary checkpoints");
  trn->add_option("--resume", resume, "Resume from a checkpoint with optimizer state")->check(CLI::ExistingFile);
  trn->add_option("--metrics-log", metrics_log, "Line-delimited training log");

  auto add_train_flags = [&](CLI::App* sub) {
    std::vector<std::pair<const char*, CLI::Option*>> opts;
    opts.emplace_back("epochs", sub->add_option("--epochs", epochs)->check(CLI::PositiveNumber));
    opts.emplace_back("restart_lengths", sub->add_option("--restart-lengths", restarts, "Comma-separated epochs"));
    opts.emplace_back("epoch_size", sub->add_option("--epoch-size", epoch_size)->check(CLI::PositiveNumber));
    opts.emplace_back("batch_size", sub->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber));
    opts.emplace_back("lr_max", sub->add_option("--lr-max", lr_max)->check(CLI::PositiveNumber));
    opts.emplace_back("lr_min", sub->add_option("--lr-min", lr_min)->check(CLI::NonNegativeNumber));
    opts.emplace_back("hidden_dim", sub->add_option("--hidden", hidden)->check(CLI::PositiveNumber));
    opts.emplace_back("embedding_dim", sub->add_option("--embedding", embedding)->check(CLI::PositiveNumber));
    opts.emplace_back("num_layers", sub->add_option("--layers", layers)->check(CLI::PositiveNumber));
    opts.emplace_back("aggregation",
                      sub->add_option("--aggregation", aggregation)->check(CLI::IsMember({"softmax", "add"})));
    opts.emplace_back("use_edge_weights", sub->add_flag("--no-edge-weights", no_edge_weights));
    return opts;
  };
  const auto train_flags = add_train_flags(trn);

  // embed
  auto* emb = app.add_subcommand("embed", "Embed every record of a corpus");
  std::string emb_corpus, emb_ckpt, emb_out;
  emb->add_option("--corpus", emb_corpus)->required()->check(CLI::ExistingFile);
  emb->add_option("--checkpoint", emb_ckpt)->required()->check(CLI::ExistingFile);
  emb->add_option("--out", emb_out, "Line-delimited embeddings (default: stdout)");

  // search
  auto* srch = app.add_subcommand("search", "Rank corpus records against a query function");
  std::string s_corpus, s_ckpt, s_query_corpus, s_query, s_binary, s_target;
  size_t top = 10;
  srch->add_option("--corpus", s_corpus, "Search index")->required()->check(CLI::ExistingFile);
  srch->add_option("--checkpoint", s_ckpt)->required()->check(CLI::ExistingFile);
  srch->add_option("--query-function", s_query, "function_id of the query")->required();
  srch->add_option("--query-binary", s_binary, "Binary name selecting one compiled version of the query");
  srch->add_option("--query-corpus", s_query_corpus, "Corpus holding the query (default: the index)")
      ->check(CLI::ExistingFile);
  srch->add_option("--top", top)->check(CLI::PositiveNumber);
  srch->add_option("--target-function", s_target, "Report the rank of this function_id");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Search-pool evaluation");
  std::string e_corpus, e_ckpt, e_sizes = "100", e_task = "xm", e_queries, e_out;
  size_t num_pools = 1000;
  ev->add_option("--corpus", e_corpus)->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", e_ckpt)->required()->check(CLI::ExistingFile);
  auto* o_sizes = ev->add_option("--pool-sizes", e_sizes, "Comma-separated pool sizes");
  auto* o_task = ev->add_option("--task", e_task)->check(CLI::IsMember({"xm", "xc"}));
  auto* o_pools = ev->add_option("--num-pools", num_pools)->check(CLI::PositiveNumber);
  ev->add_option("--queries", e_queries, "Draw queries only from identities of this corpus")
      ->check(CLI::ExistingFile);
  ev->add_option("--out", e_out, "Report output path (default: stdout)");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and compare the KYN, KYN-NE and KYN-NES variants");
  std::string a_train, a_eval, a_variants, a_ckdir, a_out, a_task = "xm";
  size_t a_pool = 100, a_pools = 1000;
  abl->add_option("--train-corpus", a_train)->required()->check(CLI::ExistingFile);
  abl->add_option("--eval-corpus", a_eval, "Candidates and queries")->required()->check(CLI::ExistingFile);
  abl->add_option("--queries", e_queries, "Draw queries only from identities of this corpus")
      ->check(CLI::ExistingFile);
  abl->add_option("--variants", a_variants, "Comma-separated subset of KYN,KYN-NE,KYN-NES");
  abl->add_option("--pool-size", a_pool)->check(CLI::Range(size_t{2}, size_t{1} << 40));
  abl->add_option("--num-pools", a_pools)->check(CLI::PositiveNumber);
  abl->add_option("--task", a_task)->check(CLI::IsMember({"xm", "xc"}));
  abl->add_option("--checkpoint-dir", a_ckdir, "Per-variant checkpoint directories");
  abl->add_option("--out", a_out, "Table output path (default: stdout)");
  const auto ablate_flags = add_train_flags(abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << app.help();
    return kExitInvalid;
  }

  try {
    if (!common.config_path.empty()) {
      std::ifstream in(common.config_path);
      try {
        common.config = json::parse(in);
      } catch (const json::parse_error& e) {
        invalid("config '" + common.config_path + "': malformed JSON at byte " + std::to_string(e.byte));
      }
      if (!common.config.is_object()) invalid("config must be a JSON object");
      for (const auto& [key, value] : common.config.items()) {
        if (key != "synth" && key != "model" && key != "train" && key != "evaluate") {
          invalid("config: unknown section '" + key + "'");
        }
      }
    }
    const bool jsonl = common.format == "jsonl";

    auto model_and_train = [&](const std::vector<std::pair<const char*, CLI::Option*>>& flags) {
      json model = common.section("model");
      json train = common.section("train");
      train["seed"] = common.seed;
      for (const auto& [key, opt] : flags) {
        if (opt->count() == 0) continue;
        const std::string k = key;
        if (k == "epochs") train[key] = epochs;
        else if (k == "restart_lengths") {
          std::vector<int> lens;
          for (const auto& part : split_csv(restarts)) {
            try {
              lens.push_back(std::stoi(part));
            } catch (const std::exception&) {
              invalid("--restart-lengths: '" + part + "' is not an integer");
            }
          }
          train[key] = lens;
        } else if (k == "epoch_size") train[key] = epoch_size;
        else if (k == "batch_size") train[key] = batch_size;
        else if (k == "lr_max") train[key] = lr_max;
        else if (k == "lr_min") train[key] = lr_min;
        else if (k == "hidden_dim") model[key] = hidden;
        else if (k == "embedding_dim") model[key] = embedding;
        else if (k == "num_layers") model[key] = layers;
        else if (k == "aggregation") model[key] = aggregation;
        else if (k == "use_edge_weights") model[key] = !no_edge_weights;
      }
      // A lone --epochs gives a single cosine cycle.
      if (train.contains("epochs") && !train.contains("restart_lengths")) {
        train["restart_lengths"] = std::vector<int>{train["epochs"].get<int>()};
      }
      return std::pair{model, train};
    };

    if (*build) {
      kyn_corpus* raw_c = nullptr;
      check(kyn_corpus_build(manifest.c_str(), common.workers, &raw_c));
      CorpusPtr c(raw_c);
      check(kyn_corpus_deduplicate(c.get(), dedup_scope.c_str()));
      if (!no_augment) check(kyn_corpus_augment(c.get()));
      if (sample_n > 0) {
        if (no_augment) invalid("--sample needs augmentation; drop --no-augment");
        check(kyn_corpus_sample(c.get(), sample_n, common.seed));
      }
      write_corpus(c.get(), build_out);
      std::cerr << corpus_info(c.get()).dump() << "\n";
    } else if (*synth) {
      json spec = common.section("synth");
      spec["seed"] = common.seed;
      overlay(spec, "num_identities", o_ident, identities);
      overlay(spec, "variants_per_identity", o_var, variants);
      overlay(spec, "architectures", o_arch, split_csv(architectures));
      overlay(spec, "feature_noise", o_noise, noise);
      overlay(spec, "edge_dropout", o_drop, dropout);
      if (holdout > 0 && synth_test_out.empty()) invalid("--holdout needs --test-out");
      if (holdout == 0 && !synth_test_out.empty()) invalid("--test-out needs --holdout");
      if (raw && holdout > 0) invalid("--raw cannot be combined with --holdout");
      kyn_corpus* raw_c = nullptr;
      check(kyn_corpus_synthesize(spec.dump().c_str(), common.workers, &raw_c));
      CorpusPtr c(raw_c);
      if (!raw) {
        check(kyn_corpus_deduplicate(c.get(), "binary"));
        check(kyn_corpus_augment(c.get()));
      }
      if (holdout > 0) {
        kyn_corpus *a = nullptr, *b = nullptr;
        check(kyn_corpus_split(c.get(), holdout, common.seed, &a, &b));
        CorpusPtr train_part(a), test_part(b);
        write_corpus(train_part.get(), synth_out);
        write_corpus(test_part.get(), synth_test_out);
      } else {
        write_corpus(c.get(), synth_out);
      }
      std::cerr << corpus_info(c.get()).dump() << "\n";
    } else if (*trn) {
      auto [model_cfg, train_cfg] = model_and_train(train_flags);
      json opts = json::object();
      if (!ckpt_dir.empty()) opts["checkpoint_dir"] = ckpt_dir;
      if (!resume.empty()) opts["resume_from"] = resume;
      if (!metrics_log.empty()) opts["metrics_log"] = metrics_log;
      auto c = read_corpus(train_corpus);
      kyn_model* m = nullptr;
      char* summary = nullptr;
      check(kyn_train(c.get(), model_cfg.dump().c_str(), train_cfg.dump().c_str(), opts.dump().c_str(),
                      progress_to_stderr, nullptr, &m, &summary));
      ModelPtr model(m);
      const json s = json::parse(take(summary));
      check(kyn_model_save(model.get(), train_out.c_str()));
      if (jsonl) {
        std::cout << s.dump() << "\n";
      } else if (!s["epochs"].empty()) {
        std::printf("trained %zu steps, final epoch mean loss %.6f\n", s["steps"].get<size_t>(),
                    s["epochs"].back()["mean_loss"].get<double>());
      }
    } else if (*emb) {
      auto c = read_corpus(emb_corpus);
      auto model = load_model(emb_ckpt);
      size_t n = 0, dim = 0;
      check(kyn_corpus_size(c.get(), &n));
      check(kyn_model_embedding_dim(model.get(), &dim));
      std::vector<float> values(n * dim);
      check(kyn_embed(model.get(), c.get(), common.workers, values.data(), values.size()));
      std::string text;
      for (size_t i = 0; i < n; ++i) {
        char* s = nullptr;
        check(kyn_corpus_record(c.get(), i, &s));
        json rec = json::parse(take(s));
        rec["embedding"] = std::vector<float>(values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                              values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        text += rec.dump() + "\n";
      }
      write_text(emb_out, text);
    } else if (*srch) {
      auto index = read_corpus(s_corpus);
      CorpusPtr separate;
      if (!s_query_corpus.empty()) separate = read_corpus(s_query_corpus);
      const kyn_corpus* queries = separate ? separate.get() : index.get();
      auto model = load_model(s_ckpt);
      const char* binary = s_binary.empty() ? nullptr : s_binary.c_str();
      char* out = nullptr;
      check(kyn_search(model.get(), queries, s_query.c_str(), binary, index.get(), top, common.workers, &out));
      const json result = json::parse(take(out));
      std::optional<size_t> rank;
      if (!s_target.empty()) {
        size_t r = 0;
        check(kyn_vulnerability_rank(model.get(), queries, s_query.c_str(), binary, s_target.c_str(), index.get(),
                                     common.workers, &r));
        rank = r;
      }
      if (jsonl) {
        for (const auto& hit : result["hits"]) std::cout << hit.dump() << "\n";
        if (rank) std::cout << json{{"target_function", s_target}, {"rank", *rank}}.dump() << "\n";
      } else {
        std::printf("query %s [%s]\n", result["query"]["function_id"].get<std::string>().c_str(),
                    result["query"]["label"]["binary_name"].get<std::string>().c_str());
        std::printf("%-5s %-10s %-40s %s\n", "Rank", "Sim", "Function", "Binary");
        for (const auto& hit : result["hits"]) {
          std::printf("%-5zu %-10.6f %-40s %s\n", hit["rank"].get<size_t>(), hit["similarity"].get<double>(),
                      hit["function_id"].get<std::string>().c_str(),
                      hit["label"]["binary_name"].get<std::string>().c_str());
        }
        if (rank) std::printf("target %s at rank %zu\n", s_target.c_str(), *rank);
      }
    } else if (*ev) {
      json opts = common.section("evaluate");
      std::vector<size_t> sizes;
      for (const auto& part : split_csv(e_sizes)) {
        try {
          sizes.push_back(std::stoul(part));
        } catch (const std::exception&) {
          invalid("--pool-sizes: '" + part + "' is not a pool size");
        }
      }
      if (o_sizes->count() > 0 || !opts.contains("pool_sizes")) opts["pool_sizes"] = sizes;
      if (o_task->count() > 0 || !opts.contains("task")) opts["task"] = e_task;
      if (o_pools->count() > 0 || !opts.contains("num_pools")) opts["num_pools"] = num_pools;
      opts["seed"] = common.seed;
      opts["workers"] = common.workers;
      opts["checkpoint"] = e_ckpt;
      if (!e_queries.empty()) opts["query_function_ids"] = query_ids(e_queries);
      auto c = read_corpus(e_corpus);
      auto model = load_model(e_ckpt);
      char* out = nullptr;
      check(kyn_evaluate(model.get(), c.get(), opts.dump().c_str(), &out));
      const json result = json::parse(take(out));
      std::string text;
      if (jsonl) {
        for (const auto& r : result["records"]) text += r.dump() + "\n";
      } else {
        text = result["table"].get<std::string>();
      }
      write_text(e_out, text);
    } else if (*abl) {
      auto [model_cfg, train_cfg] = model_and_train(ablate_flags);
      json opts{{"pool_size", a_pool}, {"num_pools", a_pools}, {"task", a_task}, {"seed", common.seed},
                {"workers", common.workers}};
      if (!a_variants.empty()) opts["variants"] = split_csv(a_variants);
      if (!a_ckdir.empty()) opts["checkpoint_dir"] = a_ckdir;
      if (!e_queries.empty()) opts["query_function_ids"] = query_ids(e_queries);
      auto tc = read_corpus(a_train);
      auto ec = read_corpus(a_eval);
      char* out = nullptr;
      check(kyn_ablate(tc.get(), ec.get(), model_cfg.dump().c_str(), train_cfg.dump().c_str(), opts.dump().c_str(),
                       progress_to_stderr, nullptr, &out));
      const json result = json::parse(take(out));
      std::string text;
      if (jsonl) {
        for (const auto& row : result["rows"]) {
          for (const char* metric : {"mrr_at_10", "recall_at_1"}) {
            text += json{{"setting", row["setting"]},
                         {"pool_size", row["pool_size"]},
                         {"metric", metric},
                         {"value", row[metric]},
                         {"seed", row["seed"]},
                         {"model_checkpoint", row["model_checkpoint"]},
                         {"task", row["task"]}}
                        .dump() +
                    "\n";
          }
        }
      } else {
        text = result["table"].get<std::string>();
      }
      write_text(a_out, text);
    }
  } catch (const Failure& f) {
    std::cerr << "kyn: " << kyn_status_name(f.status) << ": " << f.message << "\n";
    return exit_code_for(f.status);
  } catch (const json::exception& e) {
    std::cerr << "kyn: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "kyn: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
