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

#include <set>

#include "doctest.h"
#include "kyn/error.hpp"
#include "kyn/graphlet.hpp"
#include "support.hpp"

using namespace kyn;

namespace {

FunctionMeta meta(const std::string& name, int64_t instrs = 1) { return FunctionMeta{name, instrs, 0, 0, 0, 0}; }

GlobalCallGraph chain_graph() {
  // E -> A -> T -> B -> C -> D
  GlobalCallGraph g("chain");
  for (const char* n : {"E", "A", "T", "B", "C", "D"}) g.add_function(meta(n));
  g.add_call("E", "A");
  g.add_call("A", "T");
  g.add_call("T", "B");
  g.add_call("B", "C");
  g.add_call("C", "D");
  return g;
}

std::set<std::string> names(const CallGraphlet& gl) {
  std::set<std::string> out;
  for (const auto& n : gl.nodes) out.insert(n.name);
  return out;
}

std::set<std::pair<std::string, std::string>> edge_names(const CallGraphlet& gl) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& e : gl.edges) out.insert({gl.nodes[e.src].name, gl.nodes[e.dst].name});
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInternal;
}

}  // namespace

TEST_CASE("node features follow the fixed slot order") {
  CHECK(node_feature_vector(FunctionMeta{"f", 10, 2, 3, 4, 1}) == FeatureVector{10, 5, 2, 3, 4, 1});
  CHECK(node_feature_vector(FunctionMeta{"z", 0, 0, 0, 0, 0}) == FeatureVector{0, 0, 0, 0, 0, 0});
  CHECK(node_feature_vector(FunctionMeta{"g", 1, 0, 7, 0, 2}) == FeatureVector{1, 7, 0, 7, 0, 2});
}

TEST_CASE("global call graph validation") {
  GlobalCallGraph g;
  g.add_function(meta("a"));
  CHECK(code_of([&] { g.add_function(meta("a")); }) == ErrorCode::kValidation);
  CHECK(code_of([&] { g.add_function(FunctionMeta{"neg", -1, 0, 0, 0, 0}); }) == ErrorCode::kValidation);
  g.add_function(meta("b"));
  CHECK(g.add_call("a", "b"));
  CHECK_FALSE(g.add_call("a", "b"));  // set semantics
  CHECK_FALSE(g.add_call("a", "a"));  // recursion dropped
  CHECK(g.num_calls() == 1);
  CHECK(code_of([&] { g.add_call("a", "ghost"); }) == ErrorCode::kValidation);
}

TEST_CASE("graphlet construction excludes callers of callers and deep callees") {
  const auto gl = build_call_graphlet(chain_graph(), "T");
  CHECK(names(gl) == std::set<std::string>{"A", "T", "B", "C"});
  CHECK(edge_names(gl) == std::set<std::pair<std::string, std::string>>{{"A", "T"}, {"T", "B"}, {"B", "C"}});
  CHECK(gl.nodes[gl.target_index].name == "T");
  CHECK(gl.nodes[gl.target_index].role == NodeRole::kTarget);
  for (const auto& e : gl.edges) CHECK_FALSE(e.weight.has_value());
  gl.validate();
}

TEST_CASE("recursion edge dropped and isolated target") {
  GlobalCallGraph g;
  g.add_function(meta("T"));
  g.add_function(meta("B"));
  g.add_call("T", "T");
  g.add_call("T", "B");
  auto gl = build_call_graphlet(g, "T");
  CHECK(names(gl) == std::set<std::string>{"T", "B"});
  CHECK(edge_names(gl) == std::set<std::pair<std::string, std::string>>{{"T", "B"}});

  GlobalCallGraph lone;
  lone.add_function(meta("T"));
  gl = build_call_graphlet(lone, "T");
  CHECK(gl.nodes.size() == 1);
  CHECK(gl.edges.empty());
}

TEST_CASE("induced subgraph keeps edges between included nodes") {
  GlobalCallGraph g;
  for (const char* n : {"A", "T", "B", "C"}) g.add_function(meta(n));
  g.add_call("A", "T");
  g.add_call("T", "B");
  g.add_call("B", "C");
  g.add_call("C", "A");  // closes a cycle among included nodes
  g.add_call("A", "B");
  const auto gl = build_call_graphlet(g, "T");
  CHECK(edge_names(gl).size() == 5);
  gl.validate();
}

TEST_CASE("unknown target is reported") {
  try {
    build_call_graphlet(chain_graph(), "nope");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNotFound);
    CHECK(std::string(e.what()).find("function not found") != std::string::npos);
  }
}

TEST_CASE("every produced graphlet is well formed") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 1 + rng.uniform_index(15);
    GlobalCallGraph g;
    for (size_t i = 0; i < n; ++i) g.add_function(meta("f" + std::to_string(i)));
    for (auto [a, b] : testing::random_digraph(rng, n, 0.2)) g.add_call(size_t(a), size_t(b));
    for (size_t t = 0; t < n; ++t) {
      const auto gl = build_call_graphlet(g, t);
      gl.validate();
      int targets = 0;
      for (const auto& node : gl.nodes) targets += node.role == NodeRole::kTarget;
      CHECK(targets == 1);
      for (const auto& e : gl.edges) {
        CHECK(e.src != e.dst);
        CHECK(g.has_call(*g.find(gl.nodes[e.src].name), *g.find(gl.nodes[e.dst].name)));
      }
      CHECK(build_call_graphlet(g, t) == gl);  // pure
    }
  }
}

TEST_CASE("validate rejects broken graphlets") {
  auto gl = build_call_graphlet(chain_graph(), "T");
  auto broken = gl;
  broken.edges.push_back({0, 0, std::nullopt});
  CHECK(code_of([&] { broken.validate(); }) == ErrorCode::kValidation);
  broken = gl;
  broken.nodes[broken.target_index == 0 ? 1 : 0].role = NodeRole::kTarget;
  CHECK(code_of([&] { broken.validate(); }) == ErrorCode::kValidation);
  broken = compute_edge_betweenness(gl);
  broken.edges[0].weight = 1.5;
  CHECK(code_of([&] { broken.validate(); }) == ErrorCode::kValidation);
}

TEST_CASE("betweenness of the reference shapes") {
  auto bc = edge_betweenness(3, {{0, 1}, {1, 2}});
  CHECK(bc[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(bc[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  bc = edge_betweenness(2, {{0, 1}});
  CHECK(bc[0] == doctest::Approx(0.5).epsilon(1e-12));
  bc = edge_betweenness(3, {{0, 1}, {0, 2}});
  CHECK(bc[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(bc[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(edge_betweenness(1, {}).empty());
}

TEST_CASE("betweenness matches path enumeration on random graphs") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 1 + rng.uniform_index(12);
    const auto edges = testing::random_digraph(rng, n, rng.uniform(0.05, 0.35));
    const auto got = edge_betweenness(n, edges);
    const auto want = testing::brute_force_betweenness(n, edges);
    REQUIRE(got.size() == want.size());
    for (size_t e = 0; e < got.size(); ++e) {
      CHECK(std::abs(got[e] - want[e]) < 1e-9);
      CHECK(got[e] >= 0.0);
      CHECK(got[e] <= 1.0);
    }
  }
}

TEST_CASE("augmented graphlet weights") {
  GlobalCallGraph g;
  for (const char* n : {"T", "x", "y"}) g.add_function(meta(n));
  g.add_call("T", "x");
  g.add_call("T", "y");
  const auto gl = compute_edge_betweenness(build_call_graphlet(g, "T"));
  REQUIRE(gl.weighted());
  for (const auto& e : gl.edges) CHECK(*e.weight == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(compute_edge_betweenness(gl) == gl);
}

TEST_CASE("digest is order independent and feature sensitive") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gl = testing::random_graphlet(rng, 2 + static_cast<int>(rng.uniform_index(9)), false);
    const auto perm = testing::random_permutation(rng, gl.nodes.size());
    CHECK(canonical_digest(gl) == canonical_digest(testing::permute_graphlet(gl, perm)));
    auto changed = gl;
    changed.nodes[rng.uniform_index(changed.nodes.size())].features[0] += 1.0;
    CHECK(canonical_digest(gl) != canonical_digest(changed));
  }
}

TEST_CASE("digest of a single node and hex round trip") {
  GlobalCallGraph g;
  g.add_function(FunctionMeta{"T", 3, 0, 0, 1, 2});
  const auto d = canonical_digest(build_call_graphlet(g, "T"));
  const std::string hex = d.hex();
  CHECK(hex.size() == 32);
  CHECK(hex.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(GraphletDigest::from_hex(hex) == d);
  CHECK(code_of([] { GraphletDigest::from_hex("xyz"); }) == ErrorCode::kParse);
  // Names and weights do not enter the digest.
  auto renamed = build_call_graphlet(g, "T");
  renamed.nodes[0].name = "other";
  CHECK(canonical_digest(renamed) == d);
}
