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

#include "kyn/synth.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "kyn/error.hpp"
#include "kyn/parallel.hpp"
#include "kyn/rng.hpp"

namespace kyn {

using nlohmann::json;

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kValidation, "synth spec: " + msg); };
  if (num_identities == 0) fail("num_identities must be positive");
  if (variants_per_identity < 2) fail("variants_per_identity must be at least 2");
  if (architectures.empty()) fail("architectures must not be empty");
  for (double s : feature_noise) {
    if (!(s >= 0.0) || !std::isfinite(s)) fail("feature_noise entries must be finite and >= 0");
  }
  for (const auto& [arch, profile] : scale_profiles) {
    for (double f : profile) {
      if (!(f > 0.0) || !std::isfinite(f)) fail("scale profile for '" + arch + "' must be positive");
    }
  }
  if (!(edge_dropout >= 0.0 && edge_dropout <= 1.0)) fail("edge_dropout must be in [0, 1]");
  if (!(extra_edge_probability >= 0.0 && extra_edge_probability <= 1.0)) {
    fail("extra_edge_probability must be in [0, 1]");
  }
  if (max_callers < 0 || min_callees < 0 || max_callees < min_callees || max_callees_of_callee < 0) {
    fail("graphlet shape bounds are inconsistent");
  }
}

json SynthSpec::to_json() const {
  json profiles = json::object();
  for (const auto& [arch, p] : scale_profiles) profiles[arch] = p;
  return json{{"num_identities", num_identities},
              {"variants_per_identity", variants_per_identity},
              {"architectures", architectures},
              {"feature_noise", feature_noise},
              {"scale_profiles", profiles},
              {"edge_dropout", edge_dropout},
              {"seed", seed},
              {"max_callers", max_callers},
              {"min_callees", min_callees},
              {"max_callees", max_callees},
              {"max_callees_of_callee", max_callees_of_callee},
              {"extra_edge_probability", extra_edge_probability}};
}

SynthSpec SynthSpec::from_json(const json& config) {
  if (!config.is_object()) throw Error(ErrorCode::kValidation, "synth spec: expected a JSON object");
  SynthSpec spec;
  try {
    for (const auto& [key, value] : config.items()) {
      if (key == "num_identities") {
        spec.num_identities = value.get<size_t>();
      } else if (key == "variants_per_identity") {
        spec.variants_per_identity = value.get<size_t>();
      } else if (key == "architectures") {
        spec.architectures = value.get<std::vector<std::string>>();
      } else if (key == "feature_noise") {
        if (value.is_number()) {
          spec.feature_noise.fill(value.get<double>());
        } else {
          spec.feature_noise = value.get<FeatureVector>();
        }
      } else if (key == "scale_profiles") {
        for (const auto& [arch, p] : value.items()) spec.scale_profiles[arch] = p.get<FeatureVector>();
      } else if (key == "edge_dropout") {
        spec.edge_dropout = value.get<double>();
      } else if (key == "seed") {
        spec.seed = value.get<uint64_t>();
      } else if (key == "max_callers") {
        spec.max_callers = value.get<int>();
      } else if (key == "min_callees") {
        spec.min_callees = value.get<int>();
      } else if (key == "max_callees") {
        spec.max_callees = value.get<int>();
      } else if (key == "max_callees_of_callee") {
        spec.max_callees_of_callee = value.get<int>();
      } else if (key == "extra_edge_probability") {
        spec.extra_edge_probability = value.get<double>();
      } else {
        throw Error(ErrorCode::kValidation, "synth spec: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("synth spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

FeatureVector default_scale_profile(std::string_view architecture) {
  static const std::map<std::string, double, std::less<>> kInstructionScale = {
      {"x86-64", 1.0}, {"x86", 1.1},    {"arm64", 1.2},  {"arm32", 1.3},  {"riscv64", 1.35},
      {"riscv32", 1.4}, {"ppc32", 1.25}, {"ppc64", 1.2}, {"mips64", 1.5}, {"mips32", 1.6},
  };
  FeatureVector profile = {1, 1, 1, 1, 1, 1};
  if (auto it = kInstructionScale.find(architecture); it != kInstructionScale.end()) {
    profile[0] = it->second;
  } else {
    // Unknown tags get a stable factor derived from the name.
    uint64_t h = 1469598103934665603ULL;
    for (char c : architecture) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    profile[0] = 0.6 + static_cast<double>(derive_seed(h, 0) >> 11) * 0x1.0p-53;
  }
  return profile;
}

namespace {

struct BaseNode {
  std::string name;
  int64_t counts[5];  // instructions, in, out, locals, args
};

struct BaseGraphlet {
  std::vector<BaseNode> nodes;  // node 0 is the target
  std::vector<std::pair<int, int>> edges;
  std::vector<bool> protected_edge;
};

// Feature slot fed by each raw count.
constexpr int kCountSlot[5] = {0, 2, 3, 4, 5};

BaseGraphlet draw_base(const SynthSpec& spec, size_t identity, Rng& rng) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "f%05zu", identity);
  const std::string target = buf;

  BaseGraphlet g;
  g.nodes.push_back({target, {}});
  std::set<std::pair<int, int>> present;
  auto add_edge = [&](int a, int b, bool is_protected) {
    if (a == b || !present.emplace(a, b).second) return;
    g.edges.emplace_back(a, b);
    g.protected_edge.push_back(is_protected);
  };
  auto add_node = [&](std::string name) {
    g.nodes.push_back({std::move(name), {}});
    return static_cast<int>(g.nodes.size() - 1);
  };

  const int num_callers = static_cast<int>(rng.uniform_int(0, spec.max_callers));
  const int num_callees = static_cast<int>(rng.uniform_int(spec.min_callees, spec.max_callees));
  for (int i = 0; i < num_callers; ++i) add_edge(add_node(target + ".r" + std::to_string(i)), 0, true);
  std::vector<int> callees;
  for (int i = 0; i < num_callees; ++i) {
    const int c = add_node(target + ".c" + std::to_string(i));
    callees.push_back(c);
    add_edge(0, c, true);
  }
  for (int i = 0; i < num_callees; ++i) {
    const int k = static_cast<int>(rng.uniform_int(0, spec.max_callees_of_callee));
    for (int j = 0; j < k; ++j) {
      add_edge(callees[i], add_node(target + ".c" + std::to_string(i) + "." + std::to_string(j)), true);
    }
  }
  // Extra calls among non-target nodes; edges touching the target would change
  // which roles the nodes play.
  const int n = static_cast<int>(g.nodes.size());
  if (n > 2) {
    for (int u = 1; u < n; ++u) {
      if (rng.bernoulli(spec.extra_edge_probability)) {
        const int v = 1 + static_cast<int>(rng.uniform_index(static_cast<size_t>(n - 1)));
        add_edge(u, v, false);
      }
    }
  }

  std::vector<int> local_in(n, 0);
  std::vector<int> local_out(n, 0);
  for (const auto& [a, b] : g.edges) {
    ++local_out[a];
    ++local_in[b];
  }
  for (int i = 0; i < n; ++i) {
    auto& c = g.nodes[i].counts;
    c[0] = 1 + static_cast<int64_t>(std::llround(std::exp(3.5 + 1.0 * rng.normal())));
    // The target's callers and the callees' callees are all inside the
    // graphlet; everything else may have calls leaving it.
    const bool sees_all_callees = i == 0 || std::find(callees.begin(), callees.end(), i) != callees.end();
    c[1] = local_in[i] + (i == 0 ? 0 : rng.uniform_int(0, 4));
    c[2] = local_out[i] + (sees_all_callees ? 0 : rng.uniform_int(0, 5));
    c[3] = rng.uniform_int(0, 12);
    c[4] = rng.uniform_int(0, 6);
  }
  return g;
}

CompileLabel variant_label(const SynthSpec& spec, size_t variant) {
  static const char* kOpts[] = {"O0", "O1", "O2", "O3", "Os"};
  const size_t num_arch = spec.architectures.size();
  CompileLabel label;
  label.project = "synth";
  label.architecture = spec.architectures[variant % num_arch];
  const auto& arch = label.architecture;
  label.bitness = arch.size() >= 2 && arch.compare(arch.size() - 2, 2, "64") == 0 ? 64 : 32;
  const bool clang = (variant / num_arch) % 2 == 1;
  label.compiler = clang ? "clang" : "gcc";
  label.compiler_version = clang ? "14" : "11";
  label.optimization = kOpts[variant % 5];
  label.binary_name = "synth-v" + std::to_string(variant) + "-" + arch + "-" + label.compiler + "-" +
                      label.optimization;
  return label;
}

CorpusRecord make_variant(const SynthSpec& spec, const BaseGraphlet& base, size_t variant, Rng& rng) {
  const CompileLabel label = variant_label(spec, variant);
  auto profile_it = spec.scale_profiles.find(label.architecture);
  const FeatureVector profile =
      profile_it != spec.scale_profiles.end() ? profile_it->second : default_scale_profile(label.architecture);

  GlobalCallGraph graph(label.binary_name);
  for (const auto& node : base.nodes) {
    FunctionMeta meta;
    meta.name = node.name;
    int64_t counts[5];
    for (int k = 0; k < 5; ++k) {
      const int slot = kCountSlot[k];
      const double noise = spec.feature_noise[slot] > 0.0 ? std::exp(spec.feature_noise[slot] * rng.normal()) : 1.0;
      const double value = static_cast<double>(node.counts[k]) * profile[slot] * noise;
      counts[k] = std::max<int64_t>(0, std::llround(value));
    }
    meta.num_instructions = counts[0];
    meta.in_degree = counts[1];
    meta.out_degree = counts[2];
    meta.num_locals = counts[3];
    meta.num_args = counts[4];
    graph.add_function(std::move(meta));
  }
  for (size_t e = 0; e < base.edges.size(); ++e) {
    const bool drop = !base.protected_edge[e] && rng.bernoulli(spec.edge_dropout);
    if (!drop) graph.add_call(static_cast<size_t>(base.edges[e].first), static_cast<size_t>(base.edges[e].second));
  }

  CorpusRecord rec;
  rec.function_id = label.project + "::" + base.nodes[0].name;
  rec.label = label;
  rec.graphlet = build_call_graphlet(graph, size_t{0});
  rec.digest = canonical_digest(rec.graphlet);
  return rec;
}

}  // namespace

Corpus generate(const SynthSpec& spec, int workers) {
  spec.validate();
  std::vector<std::vector<CorpusRecord>> per_identity(spec.num_identities);
  parallel_for(spec.num_identities, workers, [&](size_t i) {
    const uint64_t identity_seed = derive_seed(spec.seed, i);
    Rng base_rng(identity_seed);
    const BaseGraphlet base = draw_base(spec, i, base_rng);
    auto& out = per_identity[i];
    out.reserve(spec.variants_per_identity);
    for (size_t v = 0; v < spec.variants_per_identity; ++v) {
      Rng variant_rng(derive_seed(identity_seed, v + 1));
      out.push_back(make_variant(spec, base, v, variant_rng));
    }
  });
  Corpus corpus;
  corpus.provenance.sources.push_back("synth:seed=" + std::to_string(spec.seed));
  corpus.records.reserve(spec.num_identities * spec.variants_per_identity);
  for (auto& group : per_identity) {
    for (auto& rec : group) corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace kyn
