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

// Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
// exits non-zero if any failed.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kyn/checkpoint.hpp"
#include "kyn/dataset.hpp"
#include "kyn/error.hpp"
#include "kyn/eval.hpp"
#include "kyn/model.hpp"
#include "kyn/synth.hpp"
#include "kyn/training.hpp"
#include "support.hpp"

using namespace kyn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_workers = 1;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome betweenness_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  size_t edges = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 1 + rng.uniform_index(12);
    const auto g = testing::random_digraph(rng, n, rng.uniform(0.05, 0.4));
    const auto got = edge_betweenness(n, g);
    const auto want = testing::brute_force_betweenness(n, g);
    if (got.size() != want.size()) return {false, "edge count mismatch"};
    for (size_t e = 0; e < got.size(); ++e) worst = std::max(worst, std::abs(got[e] - want[e]));
    edges += g.size();
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0,
          fmt("100 graphs, %zu edges, max abs error %.2e, %.2f s (limit 10 s)", edges, worst, secs)};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.embedding_dim = 8;
  Rng rng(77);
  const auto params = init_params(cfg, 1234).cast<double>();
  double worst = 0.0;
  std::string worst_block;
  for (int i = 0; i < 20; ++i) {
    const auto batch = GraphBatch::from_graphlet(testing::random_graphlet(rng, 5), true);
    Matrix<double> up(1, cfg.embedding_dim);
    for (int c = 0; c < cfg.embedding_dim; ++c) up(0, c) = rng.normal();
    const auto r = testing::finite_difference_check(params, cfg, batch, up, 1e-4);
    if (r.worst >= worst) {
      worst = r.worst;
      worst_block = r.worst_block;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("20 graphlets x %zu parameters, worst relative error %.2e (%s), %.1f s (limit 60 s)",
              params.num_parameters(), worst, worst_block.c_str(), secs)};
}

Outcome embedding_contracts() {
  const ModelConfig cfg;
  const auto params = init_params(cfg, 99);
  Rng rng(4242);
  std::vector<CallGraphlet> gls;
  for (int i = 0; i < 120; ++i) gls.push_back(testing::random_graphlet(rng, 1 + static_cast<int>(rng.uniform_index(15))));
  std::vector<const CallGraphlet*> ptrs;
  for (const auto& g : gls) ptrs.push_back(&g);
  const Matrix<float> together = embed(params, cfg, GraphBatch::from_graphlets(ptrs, true));
  double norm_err = 0.0, perm_err = 0.0, batch_err = 0.0;
  for (size_t i = 0; i < gls.size(); ++i) {
    const Matrix<float> alone = embed(params, cfg, GraphBatch::from_graphlet(gls[i], true));
    norm_err = std::max(norm_err, std::abs(alone.row(0).cast<double>().norm() - 1.0));
    batch_err = std::max(batch_err, double((alone.row(0) - together.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff()));
    const auto perm = testing::random_permutation(rng, gls[i].nodes.size());
    const Matrix<float> p = embed(params, cfg, GraphBatch::from_graphlet(testing::permute_graphlet(gls[i], perm), true));
    perm_err = std::max(perm_err, double((alone - p).cwiseAbs().maxCoeff()));
  }
  return {norm_err <= 1e-6 && perm_err <= 1e-5 && batch_err <= 1e-6,
          fmt("%zu graphlets: |norm-1| %.1e (<=1e-6), permutation %.1e (<=1e-5), batch %.1e (<=1e-6)", gls.size(),
              norm_err, perm_err, batch_err)};
}

Outcome metric_oracles() {
  size_t lists = 0, mismatches = 0;
  auto check = [&](const std::vector<size_t>& ranks) {
    double r1 = 0, mrr = 0, ndcg = 0;
    for (size_t r : ranks) {
      r1 += r == 1;
      if (r <= 10) {
        mrr += 1.0 / double(r);
        ndcg += 1.0 / std::log2(double(r) + 1.0);
      }
    }
    const double n = double(ranks.size());
    ++lists;
    if (std::abs(recall_at_1(ranks) - r1 / n) > 1e-14 || std::abs(mrr_at_10(ranks) - mrr / n) > 1e-14 ||
        std::abs(ndcg_at_10(ranks) - ndcg / n) > 1e-14) {
      ++mismatches;
    }
  };
  // Every list of length 1..4 over ranks 1..12, then random lists up to 20.
  std::vector<size_t> cur;
  std::function<void()> rec = [&] {
    if (!cur.empty()) check(cur);
    if (cur.size() == 4) return;
    for (size_t r = 1; r <= 12; ++r) {
      cur.push_back(r);
      rec();
      cur.pop_back();
    }
  };
  rec();
  Rng rng(3);
  for (int i = 0; i < 5000; ++i) {
    std::vector<size_t> l(1 + rng.uniform_index(20));
    for (auto& r : l) r = 1 + rng.uniform_index(30);
    check(l);
  }
  const bool points = mrr_at_10(std::vector<size_t>{4}) == 0.25 &&
                      std::abs(ndcg_at_10(std::vector<size_t>{3}) - 0.5) < 1e-15;
  const auto a = RankReport::from_ranks({1, 1, 1, 1});
  const auto b = RankReport::from_ranks({8, 8, 347, 1});
  const bool rows = a.mean == 1.0 && a.median == 1.0 && b.mean == 91.0 && b.median == 8.0;
  return {mismatches == 0 && points && rows,
          fmt("%zu rank lists, %zu mismatches; rank 4 -> MRR %.2f, rank 3 -> NDCG %.2f; [1,1,1,1] -> %.0f/%.0f, "
              "[8,8,347,1] -> %.0f/%.0f",
              lists, mismatches, mrr_at_10(std::vector<size_t>{4}), ndcg_at_10(std::vector<size_t>{3}), a.mean,
              a.median, b.mean, b.median)};
}

Outcome pipeline() {
  SynthSpec spec;
  spec.num_identities = 300;
  spec.variants_per_identity = 3;
  spec.seed = 17;
  const Corpus raw = generate(spec);
  const Corpus clean = deduplicate(raw);
  // Re-add copies of 50 records into their own binaries.
  Corpus injected = raw;
  Rng rng(5);
  const auto picks = rng.sample_without_replacement(raw.size(), 50);
  for (size_t i : picks) injected.records.push_back(raw.records[i]);
  const Corpus dedup = deduplicate(injected);
  const bool exact = dedup.records == clean.records && injected.size() - dedup.size() == raw.size() - clean.size() + 50;

  const Corpus aug = augment(clean);
  const Corpus sampled = sample(aug, 500, 3);
  bool round_trip = true;
  for (const Corpus* c : {&raw, &aug, &sampled}) {
    const std::string text = serialize_corpus(*c);
    const Corpus back = parse_corpus(text);
    round_trip = round_trip && back == *c && serialize_corpus(back) == text;
  }
  const auto dir = testing::scratch_dir("acceptance-pipeline");
  write_corpus(sampled, dir / "a.jsonl");
  write_corpus(read_corpus(dir / "a.jsonl"), dir / "b.jsonl");
  round_trip = round_trip && read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl");
  std::filesystem::remove_all(dir);

  int hard = 0, attempts = 0;
  auto expect_stage_error = [&](const std::function<void()>& fn) {
    ++attempts;
    try {
      fn();
    } catch (const Error& e) {
      hard += e.code() == ErrorCode::kStageOrder;
    }
  };
  expect_stage_error([&] { augment(raw); });
  expect_stage_error([&] { sample(raw, 10, 0); });
  expect_stage_error([&] { sample(clean, 10, 0); });
  expect_stage_error([&] { deduplicate(clean); });
  expect_stage_error([&] { deduplicate(aug); });
  expect_stage_error([&] { augment(sampled); });
  return {exact && round_trip && hard == attempts,
          fmt("dedup removed %zu of %zu records (50 injected, %zu pre-existing), round trip %s, %d/%d stage-order "
              "violations rejected",
              injected.size() - dedup.size(), injected.size(), raw.size() - clean.size(),
              round_trip ? "byte-identical" : "DIFFERS", hard, attempts)};
}

Outcome overfit_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthSpec spec;
  spec.num_identities = 64;
  spec.variants_per_identity = 2;
  spec.seed = 5;
  const Corpus c = augment(deduplicate(generate(spec, g_workers)));
  const ModelConfig cfg;
  TrainConfig t;
  t.restart_lengths = {20};
  t.epochs = 20;
  t.batch_size = 64;
  t.epoch_size = 640;
  t.seed = 5;
  const auto result = train(c, cfg, t);
  const double loss = result.epochs.back().mean_loss;
  const std::vector<size_t> sizes{64};
  const auto report = evaluate(result.params, cfg, c, sizes, Task::kXM, 500, 5, g_workers);
  const double secs = seconds_since(t0);
  return {result.steps.size() == 200 && loss < 0.05 && report[0].recall_at_1 >= 0.95 && secs < 300.0,
          fmt("%zu records, %zu steps, final mean batch loss %.2e (<0.05), train-pool R@1 %.4f at N=64 over 500 pools "
              "(>=0.95), %.0f s (limit 300 s)",
              c.size(), result.steps.size(), loss, report[0].recall_at_1, secs)};
}

// Desk-scale corpus and the full model trained on it, shared with the
// ablation criterion.
struct Desk {
  Corpus train;
  Corpus test;
  ModelConfig config;
  TrainConfig train_config;
  ModelParams<float> params;
  double train_seconds = 0.0;
};

const Desk& desk() {
  static std::optional<Desk> d;
  if (d) return *d;
  const auto t0 = std::chrono::steady_clock::now();
  SynthSpec spec;
  spec.num_identities = 2000;
  spec.variants_per_identity = 4;
  spec.seed = 11;
  auto [tr, te] = split_by_identity(augment(deduplicate(generate(spec, g_workers))), 200, 11);
  Desk out{std::move(tr), std::move(te), ModelConfig{}, TrainConfig{}, {}, 0.0};
  out.train_config.restart_lengths = {5, 10, 15};
  out.train_config.epochs = 30;
  out.train_config.epoch_size = 10000;
  out.train_config.seed = 11;
  TrainOptions opts;
  opts.progress = [](const std::string& m) { std::fprintf(stderr, "  desk: %s\n", m.c_str()); };
  out.params = train(out.train, out.config, out.train_config, opts).params;
  out.train_seconds = seconds_since(t0);
  d = std::move(out);
  return *d;
}

Outcome desk_retrieval() {
  const auto t0 = std::chrono::steady_clock::now();
  const Desk& d = desk();
  const std::vector<size_t> n100{100};
  const auto pure = evaluate(d.params, d.config, d.test, n100, Task::kXM, 1000, 11, g_workers);
  // The held-out split has only 200 identities, so the larger pools draw
  // held-out queries against candidates from the whole corpus.
  Corpus mixed = d.train;
  std::vector<size_t> queries;
  for (const auto& r : d.test.records) {
    queries.push_back(mixed.records.size());
    mixed.records.push_back(r);
  }
  const std::vector<size_t> sizes{100, 1000};
  const auto mix = evaluate(d.params, d.config, mixed, sizes, Task::kXM, 1000, 11, g_workers, queries);
  const double secs = seconds_since(t0);
  const double r100 = pure[0].recall_at_1;
  const bool ok = r100 >= 0.80 && mix[1].recall_at_1 <= mix[0].recall_at_1 && mix[1].recall_at_1 <= r100 &&
                  secs < 1800.0;
  return {ok, fmt("%zu train / %zu held-out records, %d epochs of %zu; held-out R@1 %.4f MRR@10 %.4f at N=100 (>=0.80); "
                  "held-out queries vs full corpus: R@1 %.4f at N=100, %.4f at N=1000 (monotone %s); %.0f s "
                  "(limit 1800 s)",
                  d.train.size(), d.test.size(), d.train_config.epochs, d.train_config.epoch_size, r100,
                  pure[0].mrr_at_10, mix[0].recall_at_1, mix[1].recall_at_1,
                  mix[1].recall_at_1 <= std::min(mix[0].recall_at_1, r100) ? "yes" : "NO", secs)};
}

Outcome ablation() {
  const Desk& d = desk();
  // All-ones weights through the weighted path equal the unweighted path.
  ModelConfig ne = d.config;
  ne.use_edge_weights = false;
  size_t identical = 0;
  for (const auto& r : d.test.records) {
    CallGraphlet g = r.graphlet;
    for (auto& e : g.edges) e.weight = 1.0;
    const Matrix<float> a = embed(d.params, d.config, GraphBatch::from_graphlet(g, true));
    const Matrix<float> b = embed(d.params, ne, GraphBatch::from_graphlet(g, false));
    identical += a == b;
  }

  AblationOptions o;
  o.pool_size = 100;
  o.num_pools = 1000;
  o.seed = 11;
  o.workers = g_workers;
  o.progress = [](const std::string& m) { std::fprintf(stderr, "  ablation: %s\n", m.c_str()); };
  const auto variants = standard_variants(d.config);
  const auto rows = run_ablation(d.train, d.test, variants, d.train_config, o);
  const std::string table = render_ablation_table(rows);
  std::printf("%s", table.c_str());
  bool populated = rows.size() == 3;
  for (const auto& r : rows) populated = populated && r.mrr_at_10 > 0.0 && r.recall_at_1 > 0.0;
  return {populated && identical == d.test.size(),
          fmt("3 variants trained and evaluated (table above); all-ones weights bit-identical to unweighted on "
              "%zu/%zu held-out graphlets",
              identical, d.test.size())};
}

std::string pipeline_run(int workers, const std::filesystem::path& dir) {
  SynthSpec spec;
  spec.num_identities = 300;
  spec.variants_per_identity = 3;
  spec.seed = 23;
  const Corpus all = sample(augment(deduplicate(generate(spec, workers))), 800, 23);
  const auto [tr, te] = split_by_identity(all, 60, 23);
  ModelConfig cfg;
  cfg.hidden_dim = 64;
  cfg.embedding_dim = 32;
  TrainConfig t;
  t.restart_lengths = {2, 2};
  t.epochs = 4;
  t.epoch_size = 512;
  t.seed = 23;
  TrainOptions o;
  o.metrics_log = dir / "metrics.jsonl";
  o.checkpoint_dir = dir / "ckpt";
  const auto result = train(tr, cfg, t, o);
  const std::vector<size_t> sizes{10, 50};
  std::string out = read_file(dir / "metrics.jsonl");
  for (const auto& r : evaluate(result.params, cfg, te, sizes, Task::kXM, 500, 23, workers)) {
    for (const auto& rec : r.to_records("final.ckpt")) out += rec.dump() + "\n";
  }
  return out;
}

Outcome determinism() {
  const auto dir = testing::scratch_dir("acceptance-determinism");
  std::filesystem::create_directories(dir / "a");
  std::filesystem::create_directories(dir / "b");
  const std::string a = pipeline_run(1, dir / "a");
  const std::string b = pipeline_run(std::max(2, g_workers), dir / "b");
  const bool same_ckpt = read_file(dir / "a" / "ckpt" / "final.ckpt") == read_file(dir / "b" / "ckpt" / "final.ckpt");
  std::filesystem::remove_all(dir);
  const size_t lines = static_cast<size_t>(std::count(a.begin(), a.end(), '\n'));
  return {a == b && same_ckpt,
          fmt("two synth+dedup+augment+sample+split+train+evaluate runs (1 and %d workers): %zu log/metric lines %s, "
              "final checkpoints %s",
              std::max(2, g_workers), lines, a == b ? "identical" : "DIFFER", same_ckpt ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  g_workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"betweenness oracle", betweenness_oracle},
      {"gradient check", gradient_check},
      {"embedding contracts", embedding_contracts},
      {"metric oracles", metric_oracles},
      {"pipeline", pipeline},
      {"overfit smoke", overfit_smoke},
      {"desk-scale retrieval", desk_retrieval},
      {"ablation harness", ablation},
      {"determinism", determinism},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, fn] = criteria[i];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
