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

// Shared test helpers: random inputs and brute-force oracles that do not
// reuse library code paths.

#ifndef KYN_TESTS_SUPPORT_HPP
#define KYN_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "kyn/graphlet.hpp"
#include "kyn/model.hpp"
#include "kyn/rng.hpp"

namespace kyn::testing {

// Edge betweenness by enumerating every simple path from every source and
// keeping, per destination, the shortest ones. Normalized by n(n-1).
inline std::vector<double> brute_force_betweenness(size_t n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<std::pair<int, int>>> out(n);  // (neighbor, edge id)
  for (size_t e = 0; e < edges.size(); ++e) out[edges[e].first].push_back({edges[e].second, static_cast<int>(e)});
  std::vector<double> total(edges.size(), 0.0);
  for (size_t s = 0; s < n; ++s) {
    std::vector<size_t> best_len(n, std::numeric_limits<size_t>::max());
    std::vector<double> num_paths(n, 0.0);
    std::vector<std::vector<double>> uses(n, std::vector<double>(edges.size(), 0.0));
    std::vector<int> path;
    std::vector<bool> on_path(n, false);
    std::function<void(int)> walk = [&](int v) {
      if (static_cast<size_t>(v) != s) {
        if (path.size() < best_len[v]) {
          best_len[v] = path.size();
          num_paths[v] = 0.0;
          std::fill(uses[v].begin(), uses[v].end(), 0.0);
        }
        if (path.size() == best_len[v]) {
          num_paths[v] += 1.0;
          for (int e : path) uses[v][e] += 1.0;
        }
      }
      for (auto [w, e] : out[v]) {
        if (on_path[w]) continue;
        on_path[w] = true;
        path.push_back(e);
        walk(w);
        path.pop_back();
        on_path[w] = false;
      }
    };
    on_path[s] = true;
    walk(static_cast<int>(s));
    for (size_t t = 0; t < n; ++t) {
      if (t == s || num_paths[t] == 0.0) continue;
      for (size_t e = 0; e < edges.size(); ++e) total[e] += uses[t][e] / num_paths[t];
    }
  }
  if (n >= 2) {
    for (double& v : total) v /= static_cast<double>(n * (n - 1));
  }
  return total;
}

// Random simple directed graph without self-loops.
inline std::vector<std::pair<int, int>> random_digraph(Rng& rng, size_t n, double p) {
  std::vector<std::pair<int, int>> edges;
  for (size_t a = 0; a < n; ++a) {
    for (size_t b = 0; b < n; ++b) {
      if (a != b && rng.bernoulli(p)) edges.push_back({static_cast<int>(a), static_cast<int>(b)});
    }
  }
  return edges;
}

// A valid weighted graphlet with exactly `num_nodes` nodes and real-valued
// (tie-free) features, built through the public graph API.
inline CallGraphlet random_graphlet(Rng& rng, int num_nodes, bool weighted = true) {
  GlobalCallGraph g("random");
  for (int i = 0; i < num_nodes; ++i) g.add_function(FunctionMeta{"n" + std::to_string(i), 1, 0, 0, 0, 0});
  // Node 0 is the target; attach every other node as caller, callee or
  // callee-of-callee of an earlier callee.
  std::vector<int> callees;
  for (int i = 1; i < num_nodes; ++i) {
    const int kind = static_cast<int>(rng.uniform_index(callees.empty() ? 2 : 3));
    if (kind == 0) {
      g.add_call(static_cast<size_t>(i), size_t{0});
    } else if (kind == 1) {
      g.add_call(size_t{0}, static_cast<size_t>(i));
      callees.push_back(i);
    } else {
      g.add_call(static_cast<size_t>(callees[rng.uniform_index(callees.size())]), static_cast<size_t>(i));
    }
  }
  for (int k = 0; k < num_nodes; ++k) {
    const auto a = rng.uniform_index(static_cast<size_t>(num_nodes));
    const auto b = rng.uniform_index(static_cast<size_t>(num_nodes));
    if (a != b && rng.bernoulli(0.3)) g.add_call(a, b);
  }
  CallGraphlet gl = build_call_graphlet(g, size_t{0});
  for (auto& node : gl.nodes) {
    for (double& f : node.features) f = rng.uniform(0.0, 20.0);
  }
  return weighted ? compute_edge_betweenness(std::move(gl)) : gl;
}

// Same graphlet with its nodes reordered by `perm` (new index = perm[old]).
inline CallGraphlet permute_graphlet(const CallGraphlet& g, const std::vector<int>& perm) {
  CallGraphlet out;
  out.nodes.resize(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i) out.nodes[perm[i]] = g.nodes[i];
  out.target_index = perm[g.target_index];
  for (const auto& e : g.edges) out.edges.push_back({perm[e.src], perm[e.dst], e.weight});
  return out;
}

inline std::vector<int> random_permutation(Rng& rng, size_t n) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  return perm;
}

// Worst per-block relative error between backward() and central finite
// differences of sum(upstream .* embed(params)), evaluated in double.
struct GradientCheck {
  double worst = 0.0;
  std::string worst_block;
};

inline GradientCheck finite_difference_check(const ModelParams<double>& params, const ModelConfig& config,
                                             const GraphBatch& batch, const Matrix<double>& upstream,
                                             double step = 1e-4) {
  const auto pass = forward(params, config, batch);
  const ModelParams<double> analytic = backward(params, config, batch, pass, upstream);
  auto objective = [&](const ModelParams<double>& p) { return (embed(p, config, batch).array() * upstream.array()).sum(); };

  std::vector<std::vector<double>> numeric;
  ModelParams<double> probe = params;
  std::vector<std::string> names;
  std::vector<std::pair<double*, size_t>> slots;
  probe.for_each_block([&](const std::string& name, double* data, Eigen::Index r, Eigen::Index c) {
    names.push_back(name);
    slots.push_back({data, static_cast<size_t>(r * c)});
  });
  for (auto [data, size] : slots) {
    std::vector<double> g(size);
    for (size_t i = 0; i < size; ++i) {
      const double keep = data[i];
      data[i] = keep + step;
      const double up = objective(probe);
      data[i] = keep - step;
      const double down = objective(probe);
      data[i] = keep;
      g[i] = (up - down) / (2.0 * step);
    }
    numeric.push_back(std::move(g));
  }
  GradientCheck out;
  size_t b = 0;
  analytic.for_each_block([&](const std::string&, const double* data, Eigen::Index r, Eigen::Index c) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (Eigen::Index i = 0; i < r * c; ++i) {
      diff += (data[i] - numeric[b][i]) * (data[i] - numeric[b][i]);
      na += data[i] * data[i];
      nn += numeric[b][i] * numeric[b][i];
    }
    // Blocks whose true gradient vanishes (a bias feeding a norm) are
    // compared absolutely; both sides are then roundoff.
    const double rel = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-6);
    if (rel >= out.worst) {
      out.worst = rel;
      out.worst_block = names[b];
    }
    ++b;
  });
  return out;
}

// Fresh per-process scratch directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kyn-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace kyn::testing

#endif  // KYN_TESTS_SUPPORT_HPP
