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

#include "kyn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "kyn/error.hpp"
#include "kyn/rng.hpp"

namespace kyn {

using nlohmann::json;

namespace {

constexpr uint64_t kEpochStream = 0x65706f6368ULL;

struct Block {
  std::string name;
  float* data;
  size_t size;
};

std::vector<Block> blocks_of(ModelParams<float>& params) {
  std::vector<Block> out;
  params.for_each_block([&](const std::string& name, float* data, Eigen::Index r, Eigen::Index c) {
    out.push_back({name, data, static_cast<size_t>(r * c)});
  });
  return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string format_lr(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", lr);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kValidation, "train config: " + msg); };
  if (!(margin > 0 && margin < 1)) fail("margin must lie in (0, 1)");
  if (!(gamma > 0)) fail("gamma must be positive");
  if (!(lr_min >= 0 && lr_max >= lr_min)) fail("need 0 <= lr_min <= lr_max");
  if (epochs <= 0) fail("epochs must be positive");
  if (restart_lengths.empty()) fail("restart_lengths must not be empty");
  int total = 0;
  for (int len : restart_lengths) {
    if (len <= 0) fail("restart lengths must be positive");
    total += len;
  }
  if (total != epochs) {
    fail("restart lengths sum to " + std::to_string(total) + " but epochs is " + std::to_string(epochs));
  }
  if (versions_per_function < 2) fail("versions_per_function must be at least 2");
  if (batch_size % versions_per_function != 0) fail("batch_size must be a multiple of versions_per_function");
  if (batch_size / versions_per_function < 2) fail("a batch must hold at least two identities");
  if (epoch_size < batch_size) fail("epoch_size must be at least batch_size");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
}

json TrainConfig::to_json() const {
  return json{{"margin", margin},
              {"gamma", gamma},
              {"lr_max", lr_max},
              {"lr_min", lr_min},
              {"restart_lengths", restart_lengths},
              {"epochs", epochs},
              {"epoch_size", epoch_size},
              {"batch_size", batch_size},
              {"versions_per_function", versions_per_function},
              {"adam_beta1", adam_beta1},
              {"adam_beta2", adam_beta2},
              {"adam_eps", adam_eps},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kValidation, "train config: expected an object");
  TrainConfig c;
  bool epochs_given = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "margin") c.margin = value.get<double>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "lr_max") c.lr_max = value.get<double>();
      else if (key == "lr_min") c.lr_min = value.get<double>();
      else if (key == "restart_lengths") c.restart_lengths = value.get<std::vector<int>>();
      else if (key == "epochs") { c.epochs = value.get<int>(); epochs_given = true; }
      else if (key == "epoch_size") c.epoch_size = value.get<size_t>();
      else if (key == "batch_size") c.batch_size = value.get<size_t>();
      else if (key == "versions_per_function") c.versions_per_function = value.get<size_t>();
      else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else throw Error(ErrorCode::kValidation, "train config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("train config: ") + e.what());
  }
  // A schedule without an explicit epoch count runs for its full length.
  if (!epochs_given && j.contains("restart_lengths")) {
    c.epochs = std::accumulate(c.restart_lengths.begin(), c.restart_lengths.end(), 0);
  }
  c.validate();
  return c;
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw Error(ErrorCode::kInvalidArgument, "epoch " + std::to_string(epoch) + " is outside the schedule");
  }
  int start = 0;
  for (int len : config.restart_lengths) {
    if (epoch < start + len) {
      const double t = static_cast<double>(epoch - start) / len;
      return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
    }
    start += len;
  }
  throw Error(ErrorCode::kInvalidArgument, "epoch " + std::to_string(epoch) + " is outside the schedule");
}

// ---------------------------------------------------------------------------
// Batches

std::vector<std::vector<size_t>> make_epoch_batches(const Corpus& corpus, const TrainConfig& config, int epoch,
                                                    const std::function<void(const std::string&)>& warn) {
  config.validate();
  const size_t versions = config.versions_per_function;

  // Identities in order of first appearance.
  std::vector<std::vector<size_t>> groups;
  std::unordered_map<std::string_view, size_t> slot;
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(corpus.records[i].function_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  std::vector<size_t> eligible;
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].size() >= versions) eligible.push_back(g);
  }
  if (warn && eligible.size() < groups.size()) {
    warn("skipping " + std::to_string(groups.size() - eligible.size()) + " of " + std::to_string(groups.size()) +
         " identities with fewer than " + std::to_string(versions) + " records");
  }
  const size_t per_batch = config.batch_size / versions;
  if (eligible.size() < per_batch) {
    throw Error(ErrorCode::kValidation, "corpus has " + std::to_string(eligible.size()) +
                                            " identities with at least " + std::to_string(versions) +
                                            " records but a batch needs " + std::to_string(per_batch));
  }

  Rng rng(derive_seed(config.seed, kEpochStream + static_cast<uint64_t>(epoch)));
  const size_t num_batches = config.epoch_size / config.batch_size;
  std::vector<std::vector<size_t>> batches(num_batches);
  for (auto& batch : batches) {
    batch.reserve(config.batch_size);
    for (size_t pick : rng.sample_without_replacement(eligible.size(), per_batch)) {
      const auto& members = groups[eligible[pick]];
      // Prefer versions with distinct compile labels.
      std::map<CompileLabel, std::vector<size_t>> by_label;
      for (size_t r : members) by_label[corpus.records[r].label].push_back(r);
      if (by_label.size() >= versions) {
        std::vector<const std::vector<size_t>*> labels;
        for (const auto& [label, rs] : by_label) labels.push_back(&rs);
        for (size_t l : rng.sample_without_replacement(labels.size(), versions)) {
          const auto& rs = *labels[l];
          batch.push_back(rs[rng.uniform_index(rs.size())]);
        }
      } else {
        for (size_t k : rng.sample_without_replacement(members.size(), versions)) batch.push_back(members[k]);
      }
    }
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Mining and loss

template <typename T>
std::vector<MinedPair> batch_hard_mine(const Matrix<T>& embeddings, std::span<const int> labels) {
  const auto n = embeddings.rows();
  if (static_cast<size_t>(n) != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "batch_hard_mine: label count does not match embeddings");
  }
  const Matrix<double> e = embeddings.template cast<double>();
  const Matrix<double> sim = e * e.transpose();
  std::vector<MinedPair> pairs;
  for (Eigen::Index a = 0; a < n; ++a) {
    int pos = -1;
    int neg = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos < 0 || sim(a, j) < sim(a, pos)) pos = static_cast<int>(j);
      } else if (neg < 0 || sim(a, j) > sim(a, neg)) {
        neg = static_cast<int>(j);
      }
    }
    if (pos < 0) continue;
    MinedPair p;
    p.anchor = static_cast<int>(a);
    p.positive = pos;
    p.negative = neg;
    p.s_p = sim(a, pos);
    p.s_n = neg >= 0 ? sim(a, neg) : 0.0;
    pairs.push_back(p);
  }
  return pairs;
}

template std::vector<MinedPair> batch_hard_mine<float>(const Matrix<float>&, std::span<const int>);
template std::vector<MinedPair> batch_hard_mine<double>(const Matrix<double>&, std::span<const int>);

namespace {

struct CircleParts {
  double arg;
  double alpha_p;
  double alpha_n;
};

CircleParts circle_parts(double s_p, double s_n, double margin, double gamma) {
  const double alpha_p = std::max(0.0, 1.0 + margin - s_p);
  const double alpha_n = std::max(0.0, s_n + margin);
  const double arg = gamma * alpha_n * (s_n - margin) - gamma * alpha_p * (s_p - 1.0 + margin);
  return {arg, alpha_p, alpha_n};
}

}  // namespace

double circle_loss_term(double s_p, double s_n, double margin, double gamma) {
  return softplus(circle_parts(s_p, s_n, margin, gamma).arg);
}

CircleLossResult circle_loss(std::span<const MinedPair> pairs, double margin, double gamma) {
  CircleLossResult out;
  out.d_sp.assign(pairs.size(), 0.0);
  out.d_sn.assign(pairs.size(), 0.0);
  const auto counted = std::count_if(pairs.begin(), pairs.end(), [](const MinedPair& p) { return p.negative >= 0; });
  if (counted == 0) return out;
  const double scale = 1.0 / static_cast<double>(counted);
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.negative < 0) continue;
    const auto parts = circle_parts(p.s_p, p.s_n, margin, gamma);
    out.loss += softplus(parts.arg) * scale;
    const double s = sigmoid(parts.arg);
    out.d_sp[i] = -s * gamma * parts.alpha_p * scale;
    out.d_sn[i] = s * gamma * parts.alpha_n * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(const ModelParams<float>& like, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

void AdamOptimizer::step(ModelParams<float>& params, const ModelParams<float>& grads, double lr) {
  auto p = blocks_of(params);
  auto g = blocks_of(const_cast<ModelParams<float>&>(grads));
  auto m = blocks_of(m_);
  auto v = blocks_of(v_);
  if (p.size() != g.size() || p.size() != m.size()) {
    throw Error(ErrorCode::kStructural, "adam: parameter and gradient layouts differ");
  }
  for (size_t b = 0; b < g.size(); ++b) {
    if (g[b].size != p[b].size || m[b].size != p[b].size) {
      throw Error(ErrorCode::kStructural, "adam: block " + p[b].name + " changed shape");
    }
    for (size_t i = 0; i < g[b].size; ++i) {
      if (!std::isfinite(g[b].data[i])) {
        throw Error(ErrorCode::kNumeric, "non-finite gradient in block " + g[b].name);
      }
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (size_t b = 0; b < p.size(); ++b) {
    for (size_t i = 0; i < p[b].size; ++i) {
      const double gi = g[b].data[i];
      const double mi = beta1_ * m[b].data[i] + (1.0 - beta1_) * gi;
      const double vi = beta2_ * v[b].data[i] + (1.0 - beta2_) * gi * gi;
      m[b].data[i] = static_cast<float>(mi);
      v[b].data[i] = static_cast<float>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + eps_);
      p[b].data[i] = static_cast<float>(p[b].data[i] - update);
    }
  }
}

OptimizerSnapshot AdamOptimizer::snapshot(int next_epoch) const {
  return OptimizerSnapshot{step_, next_epoch, m_, v_};
}

void AdamOptimizer::restore(const OptimizerSnapshot& snapshot) {
  if (snapshot.first_moment.num_parameters() != m_.num_parameters() ||
      snapshot.second_moment.num_parameters() != v_.num_parameters()) {
    throw Error(ErrorCode::kStructural, "adam: snapshot does not match the model");
  }
  step_ = snapshot.step;
  m_ = snapshot.first_moment;
  v_ = snapshot.second_moment;
}

// ---------------------------------------------------------------------------
// Training

BatchLoss batch_loss_and_grads(const ModelParams<float>& params, const ModelConfig& model_config,
                               const TrainConfig& train_config, const Corpus& corpus, std::span<const size_t> batch) {
  std::vector<const CallGraphlet*> graphlets;
  std::vector<int> labels;
  std::unordered_map<std::string_view, int> ids;
  for (size_t r : batch) {
    if (r >= corpus.records.size()) throw Error(ErrorCode::kInvalidArgument, "batch index out of range");
    const auto& rec = corpus.records[r];
    graphlets.push_back(&rec.graphlet);
    labels.push_back(ids.try_emplace(rec.function_id, static_cast<int>(ids.size())).first->second);
  }
  const GraphBatch gb = GraphBatch::from_graphlets(graphlets, model_config.use_edge_weights);
  const ForwardPass<float> pass = forward(params, model_config, gb);
  const auto pairs = batch_hard_mine<float>(pass.embeddings, labels);
  const auto loss = circle_loss(pairs, train_config.margin, train_config.gamma);

  const Matrix<double> z = pass.embeddings.cast<double>();
  Matrix<double> dz = Matrix<double>::Zero(z.rows(), z.cols());
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    dz.row(p.anchor) += loss.d_sp[i] * z.row(p.positive);
    dz.row(p.positive) += loss.d_sp[i] * z.row(p.anchor);
    if (p.negative >= 0) {
      dz.row(p.anchor) += loss.d_sn[i] * z.row(p.negative);
      dz.row(p.negative) += loss.d_sn[i] * z.row(p.anchor);
    }
  }
  BatchLoss out;
  out.loss = loss.loss;
  out.pairs = pairs.size();
  out.grads = backward(params, model_config, gb, pass, Matrix<float>(dz.cast<float>()));
  return out;
}

TrainResult train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                  const TrainOptions& options) {
  model_config.validate();
  train_config.validate();
  if (model_config.use_edge_weights && !corpus.provenance.augmented) {
    throw Error(ErrorCode::kStageOrder, "training with edge weights needs an augmented corpus");
  }
  auto say = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  TrainResult result;
  result.params = init_params(model_config, train_config.seed);
  AdamOptimizer adam(result.params, train_config.adam_beta1, train_config.adam_beta2, train_config.adam_eps);
  int start_epoch = 0;
  if (options.resume_from) {
    Checkpoint ckpt = load_checkpoint(*options.resume_from);
    if (!(ckpt.model_config == model_config)) {
      throw Error(ErrorCode::kValidation, "resume: checkpoint model config differs from the requested one");
    }
    if (!ckpt.optimizer) throw Error(ErrorCode::kValidation, "resume: checkpoint carries no optimizer state");
    result.params = std::move(ckpt.params);
    adam.restore(*ckpt.optimizer);
    start_epoch = ckpt.optimizer->next_epoch;
    if (start_epoch > train_config.epochs) {
      throw Error(ErrorCode::kValidation, "resume: checkpoint is past the end of the schedule");
    }
    say("resuming at epoch " + std::to_string(start_epoch) + ", step " + std::to_string(adam.steps()));
  }

  std::ofstream log;
  if (options.metrics_log) {
    log.open(*options.metrics_log, options.resume_from ? std::ios::app : std::ios::trunc);
    if (!log) throw Error(ErrorCode::kIo, "cannot open metrics log '" + options.metrics_log->string() + "'");
  }
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  std::vector<int> boundaries;
  int acc = 0;
  for (int len : train_config.restart_lengths) boundaries.push_back(acc += len);

  auto write_checkpoint = [&](const std::string& file, int next_epoch) {
    Checkpoint ckpt;
    ckpt.model_config = model_config;
    ckpt.params = result.params;
    ckpt.seed = train_config.seed;
    ckpt.train_config = train_config.to_json();
    ckpt.optimizer = adam.snapshot(next_epoch);
    const auto path = *options.checkpoint_dir / file;
    save_checkpoint(ckpt, path);
    result.checkpoints.push_back(path);
  };

  for (int epoch = start_epoch; epoch < train_config.epochs; ++epoch) {
    const double lr = lr_at(epoch, train_config);
    std::function<void(const std::string&)> warn;
    if (epoch == start_epoch) warn = say;
    const auto batches = make_epoch_batches(corpus, train_config, epoch, warn);
    double total = 0.0;
    for (const auto& batch : batches) {
      BatchLoss bl = batch_loss_and_grads(result.params, model_config, train_config, corpus, batch);
      if (!std::isfinite(bl.loss)) {
        throw Error(ErrorCode::kNumeric, "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(adam.steps() + 1));
      }
      adam.step(result.params, bl.grads, lr);
      StepRecord rec{epoch, adam.steps(), bl.loss, lr};
      result.steps.push_back(rec);
      total += bl.loss;
      if (log) log << json{{"epoch", rec.epoch}, {"step", rec.step}, {"loss", rec.loss}, {"lr", rec.lr}}.dump() << '\n';
    }
    EpochSummary summary{epoch, total / static_cast<double>(batches.size()), lr, batches.size()};
    result.epochs.push_back(summary);
    if (log) {
      log << json{{"epoch", epoch}, {"mean_loss", summary.mean_loss}, {"lr", lr}}.dump() << '\n';
      log.flush();
    }
    char line[128];
    std::snprintf(line, sizeof(line), "epoch %d/%d  loss %.6f  lr %s", epoch + 1, train_config.epochs,
                  summary.mean_loss, format_lr(lr).c_str());
    say(line);
    if (options.checkpoint_dir && std::find(boundaries.begin(), boundaries.end(), epoch + 1) != boundaries.end()) {
      char name[64];
      std::snprintf(name, sizeof(name), "epoch-%04d.ckpt", epoch + 1);
      write_checkpoint(name, epoch + 1);
    }
  }
  if (options.checkpoint_dir) write_checkpoint("final.ckpt", train_config.epochs);
  return result;
}

}  // namespace kyn
