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

// Call graphlets: the neighborhood of one function in a binary's call graph
// (the function, its callers, its callees and the callees of its callees),
// with per-node metadata features and per-edge betweenness weights.

#ifndef KYN_GRAPHLET_HPP
#define KYN_GRAPHLET_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kyn {

inline constexpr int kNumNodeFeatures = 6;

using FeatureVector = std::array<double, kNumNodeFeatures>;

// Function-level metadata recovered by the disassembler. Degrees refer to the
// binary's global call graph.
struct FunctionMeta {
  std::string name;
  int64_t num_instructions = 0;
  int64_t in_degree = 0;
  int64_t out_degree = 0;
  int64_t num_locals = 0;
  int64_t num_args = 0;

  int64_t num_edges() const { return in_degree + out_degree; }

  // Throws Error(kValidation) on negative counts.
  void validate() const;
};

// [num_instructions, num_edges, in_degree, out_degree, num_locals, num_args]
FeatureVector node_feature_vector(const FunctionMeta& meta);

// Directed call graph of a single binary. Calls have set semantics and
// recursive self-calls are dropped on insertion.
class GlobalCallGraph {
 public:
  explicit GlobalCallGraph(std::string binary_id = {}) : binary_id_(std::move(binary_id)) {}

  const std::string& binary_id() const { return binary_id_; }

  // Throws Error(kValidation) on a duplicate name or negative counts.
  size_t add_function(FunctionMeta meta);

  // Returns false when the call was a self-call or already present. Throws
  // Error(kValidation) when either endpoint is unknown.
  bool add_call(std::string_view caller, std::string_view callee);
  bool add_call(size_t caller, size_t callee);

  size_t size() const { return meta_.size(); }
  size_t num_calls() const { return num_calls_; }
  std::optional<size_t> find(std::string_view name) const;
  const FunctionMeta& meta(size_t index) const { return meta_[index]; }
  const std::vector<FunctionMeta>& functions() const { return meta_; }

  // Sorted, duplicate-free neighbor lists.
  const std::vector<size_t>& callers(size_t index) const { return callers_[index]; }
  const std::vector<size_t>& callees(size_t index) const { return callees_[index]; }
  bool has_call(size_t caller, size_t callee) const;

 private:
  std::string binary_id_;
  std::vector<FunctionMeta> meta_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<std::vector<size_t>> callers_;
  std::vector<std::vector<size_t>> callees_;
  size_t num_calls_ = 0;
};

enum class NodeRole : uint8_t {
  kTarget = 0,
  kCaller = 1,
  kCallee = 2,
  kCalleeOfCallee = 3,
};

const char* node_role_name(NodeRole role);
// Throws Error(kParse) on an unknown name.
NodeRole parse_node_role(std::string_view name);

struct GraphletNode {
  std::string name;
  NodeRole role = NodeRole::kTarget;
  FeatureVector features{};

  bool operator==(const GraphletNode&) const = default;
};

struct GraphletEdge {
  int src = 0;
  int dst = 0;
  std::optional<double> weight;

  bool operator==(const GraphletEdge&) const = default;
};

struct CallGraphlet {
  int target_index = 0;
  std::vector<GraphletNode> nodes;
  std::vector<GraphletEdge> edges;

  size_t num_nodes() const { return nodes.size(); }
  // True when the graphlet has edges and every one carries a weight.
  bool weighted() const;

  // Checks the structural invariants: one target, in-range endpoints, no
  // self-loops or repeated edges, weights in [0, 1] and every non-target node
  // attached to the target as its role requires. Throws Error(kValidation).
  void validate() const;

  bool operator==(const CallGraphlet&) const = default;
};

// Builds the graphlet around `target`. The edge set is the subgraph of `graph`
// induced by the included nodes. Throws Error(kNotFound) for an unknown target.
CallGraphlet build_call_graphlet(const GlobalCallGraph& graph, std::string_view target);
CallGraphlet build_call_graphlet(const GlobalCallGraph& graph, size_t target);

// Directed edge betweenness of every edge in an n-node graph, computed over
// unweighted shortest paths and, for n >= 2, divided by n(n-1).
std::vector<double> edge_betweenness(size_t num_nodes,
                                     const std::vector<std::pair<int, int>>& edges);

// Returns a copy of `graphlet` whose edges carry betweenness weights.
CallGraphlet compute_edge_betweenness(CallGraphlet graphlet);

struct GraphletDigest {
  std::array<uint8_t, 16> bytes{};

  // 32 lowercase hex characters.
  std::string hex() const;
  // Throws Error(kParse) on malformed input.
  static GraphletDigest from_hex(std::string_view hex);

  auto operator<=>(const GraphletDigest&) const = default;
};

struct GraphletDigestHash {
  size_t operator()(const GraphletDigest& d) const;
};

// Order-independent digest of the unweighted structure and node features.
// Node names and edge weights do not contribute.
GraphletDigest canonical_digest(const CallGraphlet& graphlet);

}  // namespace kyn

#endif  // KYN_GRAPHLET_HPP
