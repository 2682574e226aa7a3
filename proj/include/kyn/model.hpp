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

// The graphlet embedding network.
//
// Each of the message-passing layers computes
//
//   x_i' = W1 x_i + b1 + W2 AGG_{j -> i}(e_ji * x_j)
//
// over in-neighbors along the stored call direction, followed by a
// parameter-free normalization and ReLU. Every layer's node features are
// max-pooled per graph; the pooled vectors are concatenated and mapped through
// a two-layer head (ReLU between) and L2-normalized.
//
// Everything is templated on the scalar type: float for training and
// inference, double for gradient verification.

#ifndef KYN_MODEL_HPP
#define KYN_MODEL_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "kyn/graphlet.hpp"

namespace kyn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

enum class Aggregation { kSoftmax, kAdd };
enum class Norm { kInstance, kLayer, kNone };

const char* aggregation_name(Aggregation a);
const char* norm_name(Norm n);
Aggregation parse_aggregation(std::string_view name);
Norm parse_norm(std::string_view name);

struct ModelConfig {
  int input_dim = kNumNodeFeatures;
  int hidden_dim = 256;
  int embedding_dim = 128;
  int num_layers = 3;
  Aggregation aggregation = Aggregation::kSoftmax;
  double softmax_t = 1.0;
  Norm norm = Norm::kInstance;
  double norm_eps = 1e-5;
  bool use_edge_weights = true;

  // Throws Error(kValidation).
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Matrix<T> root_weight;      // hidden x in
  Vector<T> root_bias;        // hidden
  Matrix<T> neighbor_weight;  // hidden x in
};

template <typename T>
struct ModelParams {
  std::vector<LayerParams<T>> conv;
  Matrix<T> head1_weight;  // 3h x 3h
  Vector<T> head1_bias;
  Matrix<T> head2_weight;  // e x 3h
  Vector<T> head2_bias;

  // Calls fn(name, data, rows, cols) for every parameter block in a fixed
  // order. Names look like "conv1.root_weight" and "head2.bias".
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    for (size_t l = 0; l < conv.size(); ++l) {
      const std::string p = "conv" + std::to_string(l + 1) + ".";
      visit(fn, p + "root_weight", conv[l].root_weight);
      visit(fn, p + "root_bias", conv[l].root_bias);
      visit(fn, p + "neighbor_weight", conv[l].neighbor_weight);
    }
    visit(fn, "head1.weight", head1_weight);
    visit(fn, "head1.bias", head1_bias);
    visit(fn, "head2.weight", head2_weight);
    visit(fn, "head2.bias", head2_bias);
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_block(
        [&](const std::string& name, T* data, Eigen::Index rows, Eigen::Index cols) {
          fn(name, static_cast<const T*>(data), rows, cols);
        });
  }

  size_t num_parameters() const;
  // Same shapes, all zeros.
  ModelParams zeros_like() const;
  // Shape check against a configuration. Throws Error(kStructural).
  void check_shapes(const ModelConfig& config) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& l : conv) {
      out.conv.push_back({l.root_weight.template cast<U>(), l.root_bias.template cast<U>(),
                          l.neighbor_weight.template cast<U>()});
    }
    out.head1_weight = head1_weight.template cast<U>();
    out.head1_bias = head1_bias.template cast<U>();
    out.head2_weight = head2_weight.template cast<U>();
    out.head2_bias = head2_bias.template cast<U>();
    return out;
  }

 private:
  template <typename Fn, typename M>
  static void visit(Fn& fn, const std::string& name, M& m) {
    fn(name, m.data(), m.rows(), m.cols());
  }
};

// All-zero parameters shaped for `config`.
ModelParams<float> zero_params(const ModelConfig& config);

// Glorot-uniform matrices, zero biases.
ModelParams<float> init_params(const ModelConfig& config, uint64_t seed);

struct BatchEdge {
  int src = 0;
  int dst = 0;
  double weight = 1.0;
};

// Several graphlets packed into one disjoint graph.
struct GraphBatch {
  Matrix<double> features;           // total nodes x 6
  std::vector<BatchEdge> edges;      // global node indices
  std::vector<int> node_graph;       // graph id per node
  std::vector<int> node_offsets;     // num_graphs + 1 prefix offsets

  int num_graphs() const { return static_cast<int>(node_offsets.size()) - 1; }
  int num_nodes() const { return static_cast<int>(node_graph.size()); }

  // With use_edge_weights off every edge gets weight 1. With it on, graphlets
  // that have edges must be weighted (Error(kValidation) otherwise).
  static GraphBatch from_graphlets(std::span<const CallGraphlet* const> graphlets, bool use_edge_weights);
  static GraphBatch from_graphlet(const CallGraphlet& graphlet, bool use_edge_weights);

  // Throws Error(kStructural) on inconsistent membership or endpoints.
  void validate() const;
};

// Per-channel softmax-weighted sum over the rows of `values`:
//   out_c = sum_i softmax(t * v_.c)_i * v_ic
// An empty multiset gives the zero vector.
template <typename T>
RowVector<T> softmax_aggregate(const Matrix<T>& values, T t);

// One message-passing layer (no normalization or activation).
template <typename T>
Matrix<T> graph_conv(const LayerParams<T>& layer, const Matrix<T>& features, std::span<const BatchEdge> edges,
                     bool use_edge_weights, Aggregation aggregation, T t);

// Per graph and channel: (x - mean) / sqrt(var + eps), population variance.
template <typename T>
Matrix<T> instance_norm(const Matrix<T>& features, std::span<const int> node_offsets, T eps);

// Channel-wise maximum per graph. Throws Error(kStructural) on an empty graph.
template <typename T>
Matrix<T> global_max_pool(const Matrix<T>& features, std::span<const int> node_offsets);

template <typename T>
struct LayerCache {
  Matrix<T> input;
  Matrix<T> aggregate;
  Matrix<T> softmax_weights;  // edges (sorted by destination) x in
  Matrix<T> normalized;
  Matrix<T> inv_std;
  Matrix<T> activated;
  std::vector<int> argmax;  // graphs x hidden, node index of the pooled max
};

template <typename T>
struct ForwardPass {
  Matrix<T> embeddings;          // graphs x embedding_dim, unit rows
  std::vector<bool> degenerate;  // true where the head output was zero
  // Intermediates for backward().
  std::vector<LayerCache<T>> layers;
  std::vector<int> edge_order;   // edges sorted by destination
  std::vector<int> in_offsets;   // CSR offsets into edge_order per node
  Matrix<T> concat;
  Matrix<T> head1_pre;
  Matrix<T> head1_out;
  Vector<T> head2_norm;
};

template <typename T>
ForwardPass<T> forward(const ModelParams<T>& params, const ModelConfig& config, const GraphBatch& batch);

// Embeddings only, one row per graph. Float parameters are evaluated in
// double, so a graph's embedding does not depend on its batch.
template <typename T>
Matrix<T> embed(const ModelParams<T>& params, const ModelConfig& config, const GraphBatch& batch);

// Reverse-mode gradients of sum(upstream .* embeddings) for every parameter.
template <typename T>
ModelParams<T> backward(const ModelParams<T>& params, const ModelConfig& config, const GraphBatch& batch,
                        const ForwardPass<T>& pass, const Matrix<T>& upstream);

}  // namespace kyn

#endif  // KYN_MODEL_HPP
