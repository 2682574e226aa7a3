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

#include "kyn/graphlet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>

#include <openssl/evp.h>

#include "kyn/error.hpp"

namespace kyn {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kStageOrder: return "stage-order error";
    case ErrorCode::kUnsupportedFormat: return "unsupported format";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kStructural: return "structural error";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown error";
}

void FunctionMeta::validate() const {
  auto check = [&](int64_t value, const char* field) {
    if (value < 0) {
      throw Error(ErrorCode::kValidation, "function '" + name + "': negative " + field + " (" +
                                              std::to_string(value) + ")");
    }
  };
  check(num_instructions, "ninstrs");
  check(in_degree, "indegree");
  check(out_degree, "outdegree");
  check(num_locals, "nlocals");
  check(num_args, "nargs");
}

FeatureVector node_feature_vector(const FunctionMeta& meta) {
  return {static_cast<double>(meta.num_instructions), static_cast<double>(meta.num_edges()),
          static_cast<double>(meta.in_degree),        static_cast<double>(meta.out_degree),
          static_cast<double>(meta.num_locals),       static_cast<double>(meta.num_args)};
}

// ---------------------------------------------------------------------------
// GlobalCallGraph

size_t GlobalCallGraph::add_function(FunctionMeta meta) {
  meta.validate();
  if (index_.count(meta.name) != 0) {
    throw Error(ErrorCode::kValidation, "duplicate function '" + meta.name + "'");
  }
  const size_t idx = meta_.size();
  index_.emplace(meta.name, idx);
  meta_.push_back(std::move(meta));
  callers_.emplace_back();
  callees_.emplace_back();
  return idx;
}

std::optional<size_t> GlobalCallGraph::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool GlobalCallGraph::add_call(std::string_view caller, std::string_view callee) {
  const auto from = find(caller);
  const auto to = find(callee);
  if (!from || !to) {
    throw Error(ErrorCode::kValidation, "edge " + std::string(caller) + " -> " +
                                            std::string(callee) + " references unknown node '" +
                                            std::string(!from ? caller : callee) + "'");
  }
  return add_call(*from, *to);
}

namespace {

bool insert_sorted(std::vector<size_t>& v, size_t value) {
  auto it = std::lower_bound(v.begin(), v.end(), value);
  if (it != v.end() && *it == value) return false;
  v.insert(it, value);
  return true;
}

}  // namespace

bool GlobalCallGraph::add_call(size_t caller, size_t callee) {
  if (caller >= size() || callee >= size()) {
    throw Error(ErrorCode::kValidation, "call endpoint out of range");
  }
  if (caller == callee) return false;
  if (!insert_sorted(callees_[caller], callee)) return false;
  insert_sorted(callers_[callee], caller);
  ++num_calls_;
  return true;
}

bool GlobalCallGraph::has_call(size_t caller, size_t callee) const {
  const auto& out = callees_[caller];
  return std::binary_search(out.begin(), out.end(), callee);
}

// ---------------------------------------------------------------------------
// CallGraphlet

const char* node_role_name(NodeRole role) {
  switch (role) {
    case NodeRole::kTarget: return "target";
    case NodeRole::kCaller: return "caller";
    case NodeRole::kCallee: return "callee";
    case NodeRole::kCalleeOfCallee: return "callee_of_callee";
  }
  return "?";
}

NodeRole parse_node_role(std::string_view name) {
  if (name == "target") return NodeRole::kTarget;
  if (name == "caller") return NodeRole::kCaller;
  if (name == "callee") return NodeRole::kCallee;
  if (name == "callee_of_callee") return NodeRole::kCalleeOfCallee;
  throw Error(ErrorCode::kParse, "unknown node role '" + std::string(name) + "'");
}

bool CallGraphlet::weighted() const {
  if (edges.empty()) return false;
  return std::all_of(edges.begin(), edges.end(), [](const GraphletEdge& e) { return e.weight.has_value(); });
}

void CallGraphlet::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kValidation, "graphlet: " + msg); };
  const int n = static_cast<int>(nodes.size());
  if (n == 0) fail("no nodes");
  if (target_index < 0 || target_index >= n) fail("target index out of range");
  int targets = 0;
  for (const auto& node : nodes) {
    if (node.role == NodeRole::kTarget) ++targets;
    for (double f : node.features) {
      if (!(f >= 0.0) || !std::isfinite(f)) fail("node '" + node.name + "' has an invalid feature value");
    }
  }
  if (targets != 1) fail("expected exactly one target node, found " + std::to_string(targets));
  if (nodes[target_index].role != NodeRole::kTarget) fail("target index does not point at the target node");

  std::set<std::pair<int, int>> seen;
  bool any_weight = false;
  bool all_weight = true;
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) fail("edge endpoint out of range");
    if (e.src == e.dst) fail("self-loop on node " + std::to_string(e.src));
    if (!seen.emplace(e.src, e.dst).second) {
      fail("repeated edge " + std::to_string(e.src) + " -> " + std::to_string(e.dst));
    }
    if (e.weight) {
      any_weight = true;
      if (!(*e.weight >= 0.0 && *e.weight <= 1.0)) fail("edge weight outside [0, 1]");
    } else {
      all_weight = false;
    }
  }
  if (any_weight && !all_weight) fail("edges are partially weighted");

  for (int i = 0; i < n; ++i) {
    const NodeRole role = nodes[i].role;
    bool ok = false;
    switch (role) {
      case NodeRole::kTarget:
        ok = true;
        break;
      case NodeRole::kCaller:
        ok = seen.count({i, target_index}) != 0;
        break;
      case NodeRole::kCallee:
        ok = seen.count({target_index, i}) != 0;
        break;
      case NodeRole::kCalleeOfCallee:
        for (int j = 0; j < n && !ok; ++j) {
          ok = seen.count({target_index, j}) != 0 && seen.count({j, i}) != 0;
        }
        break;
    }
    if (!ok) {
      fail("node '" + nodes[i].name + "' with role " + node_role_name(role) +
           " is not attached to the target");
    }
  }
}

CallGraphlet build_call_graphlet(const GlobalCallGraph& graph, std::string_view target) {
  const auto idx = graph.find(target);
  if (!idx) throw Error(ErrorCode::kNotFound, "function not found: '" + std::string(target) + "'");
  return build_call_graphlet(graph, *idx);
}

CallGraphlet build_call_graphlet(const GlobalCallGraph& graph, size_t target) {
  if (target >= graph.size()) throw Error(ErrorCode::kNotFound, "function not found: index " + std::to_string(target));

  // Role precedence: target, caller, callee, callee-of-callee. A function
  // that qualifies for several roles keeps the first one.
  std::map<size_t, NodeRole> role_of;
  role_of.emplace(target, NodeRole::kTarget);
  for (size_t c : graph.callers(target)) role_of.emplace(c, NodeRole::kCaller);
  for (size_t c : graph.callees(target)) role_of.emplace(c, NodeRole::kCallee);
  for (size_t c : graph.callees(target)) {
    for (size_t cc : graph.callees(c)) role_of.emplace(cc, NodeRole::kCalleeOfCallee);
  }

  std::vector<size_t> order;
  order.reserve(role_of.size());
  order.push_back(target);
  for (NodeRole role : {NodeRole::kCaller, NodeRole::kCallee, NodeRole::kCalleeOfCallee}) {
    std::vector<size_t> group;
    for (const auto& [node, r] : role_of) {
      if (r == role) group.push_back(node);
    }
    std::sort(group.begin(), group.end(), [&](size_t a, size_t b) {
      return graph.meta(a).name < graph.meta(b).name;
    });
    order.insert(order.end(), group.begin(), group.end());
  }

  std::map<size_t, int> local;
  CallGraphlet out;
  out.target_index = 0;
  for (size_t global : order) {
    local.emplace(global, static_cast<int>(out.nodes.size()));
    const FunctionMeta& meta = graph.meta(global);
    out.nodes.push_back({meta.name, role_of.at(global), node_feature_vector(meta)});
  }
  for (size_t global : order) {
    for (size_t callee : graph.callees(global)) {
      auto it = local.find(callee);
      if (it != local.end()) out.edges.push_back({local.at(global), it->second, std::nullopt});
    }
  }
  std::sort(out.edges.begin(), out.edges.end(), [](const GraphletEdge& a, const GraphletEdge& b) {
    return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Edge betweenness (Brandes accumulation over BFS shortest-path DAGs).

std::vector<double> edge_betweenness(size_t num_nodes, const std::vector<std::pair<int, int>>& edges) {
  const size_t n = num_nodes;
  std::vector<double> score(edges.size(), 0.0);
  if (edges.empty()) return score;

  // Outgoing adjacency as (neighbor, edge index).
  std::vector<std::vector<std::pair<int, size_t>>> out(n);
  for (size_t e = 0; e < edges.size(); ++e) out[edges[e].first].emplace_back(edges[e].second, e);

  std::vector<double> sigma(n);
  std::vector<double> delta(n);
  std::vector<int> dist(n);
  std::vector<std::vector<std::pair<int, size_t>>> preds(n);
  std::vector<int> stack;
  std::vector<int> queue;
  for (size_t s = 0; s < n; ++s) {
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    std::fill(dist.begin(), dist.end(), -1);
    for (auto& p : preds) p.clear();
    stack.clear();
    queue.clear();

    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(static_cast<int>(s));
    for (size_t head = 0; head < queue.size(); ++head) {
      const int v = queue[head];
      stack.push_back(v);
      for (const auto& [w, e] : out[v]) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          queue.push_back(w);
        }
        if (dist[w] == dist[v] + 1) {
          sigma[w] += sigma[v];
          preds[w].emplace_back(v, e);
        }
      }
    }
    while (!stack.empty()) {
      const int w = stack.back();
      stack.pop_back();
      for (const auto& [v, e] : preds[w]) {
        const double c = sigma[v] / sigma[w] * (1.0 + delta[w]);
        score[e] += c;
        delta[v] += c;
      }
    }
  }
  if (n >= 2) {
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
    for (double& x : score) x *= scale;
  }
  return score;
}

CallGraphlet compute_edge_betweenness(CallGraphlet graphlet) {
  if (graphlet.edges.empty()) return graphlet;
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(graphlet.edges.size());
  for (const auto& e : graphlet.edges) pairs.emplace_back(e.src, e.dst);
  const auto scores = edge_betweenness(graphlet.nodes.size(), pairs);
  for (size_t i = 0; i < scores.size(); ++i) {
    // Clamp rounding spill so the [0, 1] invariant holds exactly.
    graphlet.edges[i].weight = std::clamp(scores[i], 0.0, 1.0);
  }
  return graphlet;
}

// ---------------------------------------------------------------------------
// Digest

std::string GraphletDigest::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(32, '0');
  for (size_t i = 0; i < bytes.size(); ++i) {
    out[2 * i] = kDigits[bytes[i] >> 4];
    out[2 * i + 1] = kDigits[bytes[i] & 0xf];
  }
  return out;
}

GraphletDigest GraphletDigest::from_hex(std::string_view hex) {
  if (hex.size() != 32) throw Error(ErrorCode::kParse, "digest must be 32 hex characters");
  auto nibble = [&](char c) -> uint8_t {
    if (c >= '0' && c <= '9') return static_cast<uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<uint8_t>(c - 'a' + 10);
    throw Error(ErrorCode::kParse, "digest has a non-hex character '" + std::string(1, c) + "'");
  };
  GraphletDigest d;
  for (size_t i = 0; i < 16; ++i) d.bytes[i] = static_cast<uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return d;
}

size_t GraphletDigestHash::operator()(const GraphletDigest& d) const {
  uint64_t h;
  std::memcpy(&h, d.bytes.data(), sizeof(h));
  return static_cast<size_t>(h);
}

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& out, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

}  // namespace

GraphletDigest canonical_digest(const CallGraphlet& graphlet) {
  const size_t n = graphlet.nodes.size();
  std::vector<int> in_deg(n, 0);
  std::vector<int> out_deg(n, 0);
  for (const auto& e : graphlet.edges) {
    ++out_deg[e.src];
    ++in_deg[e.dst];
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& na = graphlet.nodes[a];
    const auto& nb = graphlet.nodes[b];
    return std::tie(na.features, na.role, in_deg[a], out_deg[a]) <
           std::tie(nb.features, nb.role, in_deg[b], out_deg[b]);
  });
  std::vector<uint32_t> relabel(n);
  for (size_t i = 0; i < n; ++i) relabel[order[i]] = static_cast<uint32_t>(i);

  std::vector<std::pair<uint32_t, uint32_t>> edges;
  edges.reserve(graphlet.edges.size());
  for (const auto& e : graphlet.edges) edges.emplace_back(relabel[e.src], relabel[e.dst]);
  std::sort(edges.begin(), edges.end());

  std::vector<uint8_t> bytes = {'K', 'Y', 'N', 'G', 1};
  put_u32(bytes, static_cast<uint32_t>(n));
  for (int idx : order) {
    const auto& node = graphlet.nodes[idx];
    for (double f : node.features) put_f64(bytes, f);
    bytes.push_back(static_cast<uint8_t>(node.role));
  }
  put_u32(bytes, static_cast<uint32_t>(edges.size()));
  for (const auto& [s, d] : edges) {
    put_u32(bytes, s);
    put_u32(bytes, d);
  }

  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &md_len, EVP_sha256(), nullptr) != 1 || md_len < 16) {
    throw Error(ErrorCode::kInternal, "sha256 digest failed");
  }
  GraphletDigest out;
  std::copy_n(md.begin(), 16, out.bytes.begin());
  return out;
}

}  // namespace kyn
