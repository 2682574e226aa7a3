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

#include "kyn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

#include "kyn/error.hpp"
#include "kyn/rng.hpp"

namespace kyn {

using nlohmann::json;

const char* aggregation_name(Aggregation a) { return a == Aggregation::kSoftmax ? "softmax" : "add"; }

const char* norm_name(Norm n) {
  switch (n) {
    case Norm::kInstance: return "instance";
    case Norm::kLayer: return "layer";
    case Norm::kNone: return "none";
  }
  return "?";
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "softmax") return Aggregation::kSoftmax;
  if (name == "add") return Aggregation::kAdd;
  throw Error(ErrorCode::kInvalidArgument, "unknown aggregation '" + std::string(name) + "' (expected softmax or add)");
}

Norm parse_norm(std::string_view name) {
  if (name == "instance") return Norm::kInstance;
  if (name == "layer") return Norm::kLayer;
  if (name == "none") return Norm::kNone;
  throw Error(ErrorCode::kInvalidArgument, "unknown norm '" + std::string(name) + "' (expected instance, layer or none)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kValidation, "model config: " + m); };
  if (input_dim != kNumNodeFeatures) fail("input_dim must be " + std::to_string(kNumNodeFeatures));
  if (hidden_dim <= 0 || embedding_dim <= 0 || num_layers <= 0) fail("dimensions must be positive");
  if (!std::isfinite(softmax_t)) fail("softmax_t must be finite");
  if (!(norm_eps > 0.0) || !std::isfinite(norm_eps)) fail("norm_eps must be positive");
}

json ModelConfig::to_json() const {
  return json{{"input_dim", input_dim},
              {"hidden_dim", hidden_dim},
              {"embedding_dim", embedding_dim},
              {"num_layers", num_layers},
              {"aggregation", aggregation_name(aggregation)},
              {"softmax_t", softmax_t},
              {"norm", norm_name(norm)},
              {"norm_eps", norm_eps},
              {"use_edge_weights", use_edge_weights},
              {"activation", "relu"}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kValidation, "model config: expected an object");
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "input_dim") c.input_dim = value.get<int>();
      else if (key == "hidden_dim") c.hidden_dim = value.get<int>();
      else if (key == "embedding_dim") c.embedding_dim = value.get<int>();
      else if (key == "num_layers") c.num_layers = value.get<int>();
      else if (key == "aggregation") c.aggregation = parse_aggregation(value.get<std::string>());
      else if (key == "softmax_t") c.softmax_t = value.get<double>();
      else if (key == "norm") c.norm = parse_norm(value.get<std::string>());
      else if (key == "norm_eps") c.norm_eps = value.get<double>();
      else if (key == "use_edge_weights") c.use_edge_weights = value.get<bool>();
      else if (key == "activation") {
        if (value.get<std::string>() != "relu") throw Error(ErrorCode::kValidation, "model config: only relu is supported");
      } else {
        throw Error(ErrorCode::kValidation, "model config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
size_t ModelParams<T>::num_parameters() const {
  size_t n = 0;
  for_each_block([&](const std::string&, const T*, Eigen::Index r, Eigen::Index c) { n += static_cast<size_t>(r * c); });
  return n;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams<T> out = *this;
  out.for_each_block([](const std::string&, T* data, Eigen::Index r, Eigen::Index c) { std::fill_n(data, r * c, T(0)); });
  return out;
}

template <typename T>
void ModelParams<T>::check_shapes(const ModelConfig& config) const {
  auto expect = [](const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows,
                   Eigen::Index want_cols) {
    if (rows != want_rows || cols != want_cols) {
      throw Error(ErrorCode::kStructural, "parameter " + name + " has shape " + std::to_string(rows) + "x" +
                                              std::to_string(cols) + ", expected " + std::to_string(want_rows) +
                                              "x" + std::to_string(want_cols));
    }
  };
  if (static_cast<int>(conv.size()) != config.num_layers) {
    throw Error(ErrorCode::kStructural, "expected " + std::to_string(config.num_layers) + " conv layers, found " +
                                            std::to_string(conv.size()));
  }
  const int h = config.hidden_dim;
  for (size_t l = 0; l < conv.size(); ++l) {
    const int in = l == 0 ? config.input_dim : h;
    const std::string p = "conv" + std::to_string(l + 1) + ".";
    expect(p + "root_weight", conv[l].root_weight.rows(), conv[l].root_weight.cols(), h, in);
    expect(p + "root_bias", conv[l].root_bias.rows(), conv[l].root_bias.cols(), h, 1);
    expect(p + "neighbor_weight", conv[l].neighbor_weight.rows(), conv[l].neighbor_weight.cols(), h, in);
  }
  const int cat = config.num_layers * h;
  expect("head1.weight", head1_weight.rows(), head1_weight.cols(), cat, cat);
  expect("head1.bias", head1_bias.rows(), head1_bias.cols(), cat, 1);
  expect("head2.weight", head2_weight.rows(), head2_weight.cols(), config.embedding_dim, cat);
  expect("head2.bias", head2_bias.rows(), head2_bias.cols(), config.embedding_dim, 1);
}

ModelParams<float> zero_params(const ModelConfig& config) {
  config.validate();
  const int h = config.hidden_dim;
  const int cat = config.num_layers * h;
  ModelParams<float> p;
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = l == 0 ? config.input_dim : h;
    p.conv.push_back({Matrix<float>::Zero(h, in), Vector<float>::Zero(h), Matrix<float>::Zero(h, in)});
  }
  p.head1_weight = Matrix<float>::Zero(cat, cat);
  p.head1_bias = Vector<float>::Zero(cat);
  p.head2_weight = Matrix<float>::Zero(config.embedding_dim, cat);
  p.head2_bias = Vector<float>::Zero(config.embedding_dim);
  return p;
}

ModelParams<float> init_params(const ModelConfig& config, uint64_t seed) {
  ModelParams<float> p = zero_params(config);
  Rng rng(derive_seed(seed, 0x696e6974ULL));
  p.for_each_block([&](const std::string&, float* data, Eigen::Index rows, Eigen::Index cols) {
    if (cols == 1) return;  // biases stay zero
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < rows * cols; ++i) data[i] = static_cast<float>(rng.uniform(-bound, bound));
  });
  return p;
}

// ---------------------------------------------------------------------------
// Batches

GraphBatch GraphBatch::from_graphlets(std::span<const CallGraphlet* const> graphlets, bool use_edge_weights) {
  GraphBatch b;
  size_t total = 0;
  for (const auto* g : graphlets) total += g->nodes.size();
  b.features.resize(static_cast<Eigen::Index>(total), kNumNodeFeatures);
  b.node_offsets.reserve(graphlets.size() + 1);
  b.node_offsets.push_back(0);
  b.node_graph.reserve(total);
  int offset = 0;
  for (size_t gi = 0; gi < graphlets.size(); ++gi) {
    const CallGraphlet& g = *graphlets[gi];
    if (g.nodes.empty()) throw Error(ErrorCode::kStructural, "graph " + std::to_string(gi) + " has no nodes");
    if (use_edge_weights && !g.edges.empty() && !g.weighted()) {
      throw Error(ErrorCode::kValidation, "graphlet " + std::to_string(gi) +
                                              " has no edge weights; augment the corpus or disable edge weights");
    }
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      for (int f = 0; f < kNumNodeFeatures; ++f) b.features(offset + static_cast<Eigen::Index>(i), f) = g.nodes[i].features[f];
      b.node_graph.push_back(static_cast<int>(gi));
    }
    for (const auto& e : g.edges) {
      b.edges.push_back({offset + e.src, offset + e.dst, use_edge_weights ? e.weight.value_or(1.0) : 1.0});
    }
    offset += static_cast<int>(g.nodes.size());
    b.node_offsets.push_back(offset);
  }
  return b;
}

GraphBatch GraphBatch::from_graphlet(const CallGraphlet& graphlet, bool use_edge_weights) {
  const CallGraphlet* one[] = {&graphlet};
  return from_graphlets(one, use_edge_weights);
}

void GraphBatch::validate() const {
  if (node_offsets.empty() || node_offsets.front() != 0 || node_offsets.back() != num_nodes()) {
    throw Error(ErrorCode::kStructural, "batch: node offsets do not cover the nodes");
  }
  if (features.rows() != num_nodes()) throw Error(ErrorCode::kStructural, "batch: feature rows mismatch");
  for (int g = 0; g < num_graphs(); ++g) {
    if (node_offsets[g + 1] <= node_offsets[g]) throw Error(ErrorCode::kStructural, "batch: empty graph " + std::to_string(g));
    for (int i = node_offsets[g]; i < node_offsets[g + 1]; ++i) {
      if (node_graph[i] != g) throw Error(ErrorCode::kStructural, "batch: membership is not contiguous");
    }
  }
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= num_nodes() || e.dst < 0 || e.dst >= num_nodes() ||
        node_graph[e.src] != node_graph[e.dst]) {
      throw Error(ErrorCode::kStructural, "batch: edge endpoint outside its graph");
    }
  }
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

struct InEdges {
  std::vector<int> order;    // edge indices sorted by destination
  std::vector<int> offsets;  // per node range into order
};

InEdges index_in_edges(int num_nodes, std::span<const BatchEdge> edges) {
  InEdges idx;
  idx.order.resize(edges.size());
  std::iota(idx.order.begin(), idx.order.end(), 0);
  std::stable_sort(idx.order.begin(), idx.order.end(), [&](int a, int b) { return edges[a].dst < edges[b].dst; });
  idx.offsets.assign(static_cast<size_t>(num_nodes) + 1, 0);
  for (const auto& e : edges) ++idx.offsets[e.dst + 1];
  for (int i = 0; i < num_nodes; ++i) idx.offsets[i + 1] += idx.offsets[i];
  return idx;
}

template <typename T>
T message_weight(const BatchEdge& e, bool use_edge_weights) {
  return use_edge_weights ? static_cast<T>(e.weight) : T(1);
}

// Weighted softmax over one set of incoming messages. `messages` holds one row
// per message; `weights` receives the normalized softmax coefficients.
template <typename T>
RowVector<T> softmax_rows(const Matrix<T>& messages, T t, Matrix<T>* weights) {
  const Eigen::Index d = messages.cols();
  if (messages.rows() == 0) return RowVector<T>::Zero(d);
  const Matrix<T> scaled = t * messages;
  const RowVector<T> shift = scaled.colwise().maxCoeff();
  Matrix<T> s = (scaled.rowwise() - shift).array().exp().matrix();
  const RowVector<T> denom = s.colwise().sum();
  s.array().rowwise() /= denom.array();
  // Expanding around the channel max keeps all-equal inputs exact and the
  // result inside [min, max].
  const RowVector<T> top = messages.colwise().maxCoeff();
  RowVector<T> out = top + (s.array() * (messages.rowwise() - top).array()).matrix().colwise().sum();
  if (weights) *weights = std::move(s);
  return out;
}

template <typename T>
void aggregate(const Matrix<T>& x, std::span<const BatchEdge> edges, const InEdges& in, bool use_edge_weights,
               Aggregation aggregation, T t, Matrix<T>& out, Matrix<T>* softmax_weights) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  out.setZero(n, d);
  if (aggregation == Aggregation::kSoftmax && softmax_weights) {
    softmax_weights->resize(static_cast<Eigen::Index>(edges.size()), d);
  }
  Matrix<T> messages;
  Matrix<T> weights;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int begin = in.offsets[i];
    const int end = in.offsets[i + 1];
    if (begin == end) continue;
    if (aggregation == Aggregation::kAdd) {
      for (int k = begin; k < end; ++k) {
        const BatchEdge& e = edges[in.order[k]];
        out.row(i) += message_weight<T>(e, use_edge_weights) * x.row(e.src);
      }
      continue;
    }
    messages.resize(end - begin, d);
    for (int k = begin; k < end; ++k) {
      const BatchEdge& e = edges[in.order[k]];
      messages.row(k - begin) = message_weight<T>(e, use_edge_weights) * x.row(e.src);
    }
    out.row(i) = softmax_rows<T>(messages, t, softmax_weights ? &weights : nullptr);
    if (softmax_weights) softmax_weights->middleRows(begin, end - begin) = weights;
  }
}

template <typename T>
void normalize(const Matrix<T>& x, std::span<const int> node_offsets, Norm norm, T eps, Matrix<T>& y,
               Matrix<T>& inv_std) {
  switch (norm) {
    case Norm::kNone:
      y = x;
      inv_std.resize(0, 0);
      return;
    case Norm::kInstance: {
      const int graphs = static_cast<int>(node_offsets.size()) - 1;
      y.resize(x.rows(), x.cols());
      inv_std.resize(graphs, x.cols());
      for (int g = 0; g < graphs; ++g) {
        const int begin = node_offsets[g];
        const int count = node_offsets[g + 1] - begin;
        const auto block = x.middleRows(begin, count);
        const RowVector<T> mean = block.colwise().mean();
        const Matrix<T> centered = block.rowwise() - mean;
        const RowVector<T> var = centered.array().square().colwise().mean().matrix();
        const RowVector<T> inv = (var.array() + eps).rsqrt().matrix();
        y.middleRows(begin, count) = (centered.array().rowwise() * inv.array()).matrix();
        inv_std.row(g) = inv;
      }
      return;
    }
    case Norm::kLayer: {
      y.resize(x.rows(), x.cols());
      inv_std.resize(x.rows(), 1);
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mean = x.row(i).mean();
        const RowVector<T> centered = x.row(i).array() - mean;
        const T var = centered.array().square().mean();
        const T inv = T(1) / std::sqrt(var + eps);
        y.row(i) = centered * inv;
        inv_std(i, 0) = inv;
      }
      return;
    }
  }
}

template <typename T>
Matrix<T> normalize_backward(const Matrix<T>& dy, const Matrix<T>& y, const Matrix<T>& inv_std,
                             std::span<const int> node_offsets, Norm norm) {
  switch (norm) {
    case Norm::kNone:
      return dy;
    case Norm::kInstance: {
      Matrix<T> dx(dy.rows(), dy.cols());
      const int graphs = static_cast<int>(node_offsets.size()) - 1;
      for (int g = 0; g < graphs; ++g) {
        const int begin = node_offsets[g];
        const int count = node_offsets[g + 1] - begin;
        const auto dyb = dy.middleRows(begin, count);
        const auto yb = y.middleRows(begin, count);
        const RowVector<T> mean_dy = dyb.colwise().mean();
        const RowVector<T> mean_dyy = dyb.cwiseProduct(yb).colwise().mean();
        const Matrix<T> inner =
            (dyb.rowwise() - mean_dy).array() - yb.array().rowwise() * mean_dyy.array();
        dx.middleRows(begin, count) = (inner.array().rowwise() * inv_std.row(g).array()).matrix();
      }
      return dx;
    }
    case Norm::kLayer: {
      Matrix<T> dx(dy.rows(), dy.cols());
      for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T mean_dy = dy.row(i).mean();
        const T mean_dyy = dy.row(i).cwiseProduct(y.row(i)).mean();
        dx.row(i) = inv_std(i, 0) * ((dy.row(i).array() - mean_dy) - y.row(i).array() * mean_dyy).matrix();
      }
      return dx;
    }
  }
  return dy;
}

template <typename T>
Matrix<T> max_pool(const Matrix<T>& x, std::span<const int> node_offsets, std::vector<int>* argmax) {
  const int graphs = static_cast<int>(node_offsets.size()) - 1;
  const Eigen::Index d = x.cols();
  Matrix<T> out(graphs, d);
  if (argmax) argmax->assign(static_cast<size_t>(graphs) * static_cast<size_t>(d), -1);
  for (int g = 0; g < graphs; ++g) {
    const int begin = node_offsets[g];
    const int end = node_offsets[g + 1];
    if (end <= begin) throw Error(ErrorCode::kStructural, "max pool: graph " + std::to_string(g) + " has no nodes");
    out.row(g) = x.row(begin);
    if (argmax) std::fill_n(argmax->begin() + static_cast<ptrdiff_t>(g) * d, d, begin);
    for (int i = begin + 1; i < end; ++i) {
      for (Eigen::Index c = 0; c < d; ++c) {
        // Strict comparison keeps the lowest index on ties.
        if (x(i, c) > out(g, c)) {
          out(g, c) = x(i, c);
          if (argmax) (*argmax)[static_cast<size_t>(g) * d + c] = i;
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
RowVector<T> softmax_aggregate(const Matrix<T>& values, T t) {
  return softmax_rows<T>(values, t, nullptr);
}

template <typename T>
Matrix<T> graph_conv(const LayerParams<T>& layer, const Matrix<T>& features, std::span<const BatchEdge> edges,
                     bool use_edge_weights, Aggregation aggregation, T t) {
  if (layer.root_weight.cols() != features.cols() || layer.neighbor_weight.cols() != features.cols() ||
      layer.root_bias.rows() != layer.root_weight.rows() ||
      layer.neighbor_weight.rows() != layer.root_weight.rows()) {
    throw Error(ErrorCode::kStructural, "graph_conv: parameter shapes do not match the input features");
  }
  const int n = static_cast<int>(features.rows());
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      throw Error(ErrorCode::kStructural, "graph_conv: edge endpoint out of range");
    }
  }
  const InEdges in = index_in_edges(n, edges);
  Matrix<T> agg;
  aggregate<T>(features, edges, in, use_edge_weights, aggregation, t, agg, nullptr);
  Matrix<T> out = features * layer.root_weight.transpose();
  out.rowwise() += layer.root_bias.transpose();
  out.noalias() += agg * layer.neighbor_weight.transpose();
  return out;
}

template <typename T>
Matrix<T> instance_norm(const Matrix<T>& features, std::span<const int> node_offsets, T eps) {
  Matrix<T> y;
  Matrix<T> inv;
  normalize<T>(features, node_offsets, Norm::kInstance, eps, y, inv);
  return y;
}

template <typename T>
Matrix<T> global_max_pool(const Matrix<T>& features, std::span<const int> node_offsets) {
  return max_pool<T>(features, node_offsets, nullptr);
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
ForwardPass<T> forward(const ModelParams<T>& params, const ModelConfig& config, const GraphBatch& batch) {
  params.check_shapes(config);
  const int n = batch.num_nodes();
  const int graphs = batch.num_graphs();
  const int h = config.hidden_dim;
  const T t = static_cast<T>(config.softmax_t);
  const T eps = static_cast<T>(config.norm_eps);
  if (batch.features.cols() != config.input_dim) {
    throw Error(ErrorCode::kStructural, "batch feature width does not match input_dim");
  }

  ForwardPass<T> pass;
  InEdges in = index_in_edges(n, batch.edges);
  pass.concat.resize(graphs, static_cast<Eigen::Index>(config.num_layers) * h);
  pass.layers.resize(config.num_layers);

  Matrix<T> x = batch.features.template cast<T>();
  for (int l = 0; l < config.num_layers; ++l) {
    const auto& layer = params.conv[l];
    LayerCache<T>& cache = pass.layers[l];
    aggregate<T>(x, batch.edges, in, config.use_edge_weights, config.aggregation, t, cache.aggregate,
                 &cache.softmax_weights);
    Matrix<T> conv(n, h);
    conv.noalias() = x * layer.root_weight.transpose();
    conv.rowwise() += layer.root_bias.transpose();
    conv.noalias() += cache.aggregate * layer.neighbor_weight.transpose();
    normalize<T>(conv, batch.node_offsets, config.norm, eps, cache.normalized, cache.inv_std);
    cache.activated = cache.normalized.cwiseMax(T(0));
    pass.concat.middleCols(static_cast<Eigen::Index>(l) * h, h) =
        max_pool<T>(cache.activated, batch.node_offsets, &cache.argmax);
    cache.input = std::move(x);
    x = cache.activated;
  }

  pass.head1_pre.resize(graphs, pass.concat.cols());
  pass.head1_pre.noalias() = pass.concat * params.head1_weight.transpose();
  pass.head1_pre.rowwise() += params.head1_bias.transpose();
  pass.head1_out = pass.head1_pre.cwiseMax(T(0));
  Matrix<T> h2(graphs, config.embedding_dim);
  h2.noalias() = pass.head1_out * params.head2_weight.transpose();
  h2.rowwise() += params.head2_bias.transpose();

  pass.embeddings.resize(graphs, config.embedding_dim);
  pass.head2_norm.resize(graphs);
  pass.degenerate.assign(graphs, false);
  for (int g = 0; g < graphs; ++g) {
    const T norm = h2.row(g).norm();
    pass.head2_norm(g) = norm;
    if (norm > T(0) && std::isfinite(norm)) {
      pass.embeddings.row(g) = h2.row(g) / norm;
    } else {
      pass.embeddings.row(g).setZero();
      pass.embeddings(g, 0) = T(1);
      pass.degenerate[g] = true;
    }
  }
  pass.edge_order = std::move(in.order);
  pass.in_offsets = std::move(in.offsets);
  return pass;
}

template <typename T>
Matrix<T> embed(const ModelParams<T>& params, const ModelConfig& config, const GraphBatch& batch) {
  if constexpr (std::is_same_v<T, float>) {
    // Float products pick different kernels for one row and for many, which
    // moves results by a few ulps. Evaluating in double and rounding once
    // keeps each embedding independent of the rest of its batch.
    return forward<double>(params.template cast<double>(), config, batch).embeddings.template cast<float>();
  } else {
    return forward<T>(params, config, batch).embeddings;
  }
}

template <typename T>
ModelParams<T> backward(const ModelParams<T>& params, const ModelConfig& config, const GraphBatch& batch,
                        const ForwardPass<T>& pass, const Matrix<T>& upstream) {
  const int graphs = batch.num_graphs();
  const int h = config.hidden_dim;
  const T t = static_cast<T>(config.softmax_t);
  if (upstream.rows() != graphs || upstream.cols() != config.embedding_dim) {
    throw Error(ErrorCode::kStructural, "backward: upstream gradient shape mismatch");
  }
  ModelParams<T> grad;
  grad.conv.resize(config.num_layers);

  // L2 normalization.
  Matrix<T> d_h2(graphs, config.embedding_dim);
  for (int g = 0; g < graphs; ++g) {
    if (pass.degenerate[g]) {
      d_h2.row(g).setZero();
      continue;
    }
    const auto z = pass.embeddings.row(g);
    const T proj = z.dot(upstream.row(g));
    d_h2.row(g) = (upstream.row(g) - proj * z) / pass.head2_norm(g);
  }

  // Head.
  grad.head2_weight = d_h2.transpose() * pass.head1_out;
  grad.head2_bias = d_h2.colwise().sum().transpose();
  Matrix<T> d_head1 = d_h2 * params.head2_weight;
  d_head1 = d_head1.cwiseProduct((pass.head1_pre.array() > T(0)).template cast<T>().matrix());
  grad.head1_weight = d_head1.transpose() * pass.concat;
  grad.head1_bias = d_head1.colwise().sum().transpose();
  const Matrix<T> d_concat = d_head1 * params.head1_weight;

  // Message-passing layers, last to first. d_out holds the gradient flowing
  // into the layer's activated output from the layer above.
  Matrix<T> d_out = Matrix<T>::Zero(batch.num_nodes(), h);
  for (int l = config.num_layers - 1; l >= 0; --l) {
    const LayerCache<T>& cache = pass.layers[l];
    const auto& layer = params.conv[l];
    auto& g = grad.conv[l];

    // Max-pool readout.
    for (int gi = 0; gi < graphs; ++gi) {
      for (int c = 0; c < h; ++c) {
        const int node = cache.argmax[static_cast<size_t>(gi) * h + c];
        d_out(node, c) += d_concat(gi, static_cast<Eigen::Index>(l) * h + c);
      }
    }
    // ReLU, then normalization.
    const Matrix<T> d_norm = d_out.cwiseProduct((cache.normalized.array() > T(0)).template cast<T>().matrix());
    const Matrix<T> d_conv = normalize_backward<T>(d_norm, cache.normalized, cache.inv_std, batch.node_offsets, config.norm);

    g.root_weight = d_conv.transpose() * cache.input;
    g.root_bias = d_conv.colwise().sum().transpose();
    g.neighbor_weight = d_conv.transpose() * cache.aggregate;
    if (l == 0) break;

    Matrix<T> d_in = d_conv * layer.root_weight;
    const Matrix<T> d_agg = d_conv * layer.neighbor_weight;
    const int n = batch.num_nodes();
    for (int i = 0; i < n; ++i) {
      const int begin = pass.in_offsets[i];
      const int end = pass.in_offsets[i + 1];
      for (int k = begin; k < end; ++k) {
        const BatchEdge& e = batch.edges[pass.edge_order[k]];
        const T w = message_weight<T>(e, config.use_edge_weights);
        if (config.aggregation == Aggregation::kAdd) {
          d_in.row(e.src) += w * d_agg.row(i);
        } else {
          // d out / d v_k = s_k (1 + t (v_k - out)), per channel.
          const auto s = cache.softmax_weights.row(k).array();
          const auto v = (w * cache.input.row(e.src)).array();
          const auto coeff = s * (T(1) + t * (v - cache.aggregate.row(i).array()));
          d_in.row(e.src).array() += w * coeff * d_agg.row(i).array();
        }
      }
    }
    d_out = std::move(d_in);
  }
  return grad;
}

#define KYN_INSTANTIATE(T)                                                                                      \
  template struct ModelParams<T>;                                                                               \
  template RowVector<T> softmax_aggregate<T>(const Matrix<T>&, T);                                              \
  template Matrix<T> graph_conv<T>(const LayerParams<T>&, const Matrix<T>&, std::span<const BatchEdge>, bool,   \
                                   Aggregation, T);                                                             \
  template Matrix<T> instance_norm<T>(const Matrix<T>&, std::span<const int>, T);                               \
  template Matrix<T> global_max_pool<T>(const Matrix<T>&, std::span<const int>);                                \
  template ForwardPass<T> forward<T>(const ModelParams<T>&, const ModelConfig&, const GraphBatch&);             \
  template Matrix<T> embed<T>(const ModelParams<T>&, const ModelConfig&, const GraphBatch&);                    \
  template ModelParams<T> backward<T>(const ModelParams<T>&, const ModelConfig&, const GraphBatch&,             \
                                      const ForwardPass<T>&, const Matrix<T>&);

KYN_INSTANTIATE(float)
KYN_INSTANTIATE(double)

#undef KYN_INSTANTIATE

}  // namespace kyn
