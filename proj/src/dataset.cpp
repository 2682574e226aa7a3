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

#include "kyn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "kyn/error.hpp"
#include "kyn/parallel.hpp"
#include "kyn/rng.hpp"

namespace kyn {

using nlohmann::json;

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

void CompileLabel::validate() const {
  if (project.empty()) throw Error(ErrorCode::kValidation, "compile label: empty project");
  if (binary_name.empty()) throw Error(ErrorCode::kValidation, "compile label: empty binary_name");
  if (bitness != 32 && bitness != 64) {
    throw Error(ErrorCode::kValidation, "compile label: bitness must be 32 or 64, got " + std::to_string(bitness));
  }
  int implied = 0;
  if (ends_with(architecture, "64")) {
    implied = 64;
  } else if (ends_with(architecture, "32") || architecture == "x86" || architecture == "i386") {
    implied = 32;
  }
  if (implied != 0 && implied != bitness) {
    throw Error(ErrorCode::kValidation, "compile label: architecture '" + architecture + "' implies " +
                                            std::to_string(implied) + "-bit but bitness is " +
                                            std::to_string(bitness));
  }
}

const char* dedup_scope_name(DedupScope scope) {
  switch (scope) {
    case DedupScope::kBinary: return "binary";
    case DedupScope::kGlobal: return "global";
    case DedupScope::kNone: return "none";
  }
  return "?";
}

DedupScope parse_dedup_scope(std::string_view name) {
  if (name == "binary") return DedupScope::kBinary;
  if (name == "global") return DedupScope::kGlobal;
  if (name == "none") return DedupScope::kNone;
  throw Error(ErrorCode::kValidation, "unknown dedup scope '" + std::string(name) +
                                               "' (expected binary, global or none)");
}

// ---------------------------------------------------------------------------
// Export parsing

namespace {

std::string node_id(const json& value, const std::string& where) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<int64_t>());
  throw Error(ErrorCode::kValidation, where + ": id must be a string or integer");
}

int64_t count_field(const json& node, const char* key, const std::string& where) {
  auto it = node.find(key);
  if (it == node.end()) throw Error(ErrorCode::kValidation, where + ": missing '" + key + "'");
  if (!it->is_number_integer()) throw Error(ErrorCode::kValidation, where + ": '" + key + "' must be an integer");
  const int64_t v = it->get<int64_t>();
  if (v < 0) {
    throw Error(ErrorCode::kValidation, where + ": negative '" + key + "' (" + std::to_string(v) + ")");
  }
  return v;
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, what + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace

GlobalCallGraph parse_export(std::string_view document, std::string binary_id) {
  const json doc = parse_json(document, "export");
  if (!doc.is_object()) throw Error(ErrorCode::kValidation, "export: top level must be an object");
  auto directed = doc.find("directed");
  if (directed == doc.end() || !directed->is_boolean() || !directed->get<bool>()) {
    throw Error(ErrorCode::kValidation, "export: 'directed' must be true");
  }
  auto nodes = doc.find("nodes");
  auto links = doc.find("links");
  if (nodes == doc.end() || !nodes->is_array()) throw Error(ErrorCode::kValidation, "export: 'nodes' must be a list");
  if (links != doc.end() && !links->is_array()) throw Error(ErrorCode::kValidation, "export: 'links' must be a list");

  GlobalCallGraph graph(std::move(binary_id));
  for (size_t i = 0; i < nodes->size(); ++i) {
    const json& node = (*nodes)[i];
    const std::string where = "export: node " + std::to_string(i);
    if (!node.is_object()) throw Error(ErrorCode::kValidation, where + ": must be an object");
    auto id = node.find("id");
    if (id == node.end()) throw Error(ErrorCode::kValidation, where + ": missing 'id'");
    FunctionMeta meta;
    meta.name = node_id(*id, where);
    meta.num_instructions = count_field(node, "ninstrs", where);
    meta.in_degree = count_field(node, "indegree", where);
    meta.out_degree = count_field(node, "outdegree", where);
    meta.num_locals = count_field(node, "nlocals", where);
    meta.num_args = count_field(node, "nargs", where);
    graph.add_function(std::move(meta));
  }
  if (links != doc.end()) {
    for (size_t i = 0; i < links->size(); ++i) {
      const json& link = (*links)[i];
      const std::string where = "export: link " + std::to_string(i);
      if (!link.is_object() || !link.contains("source") || !link.contains("target")) {
        throw Error(ErrorCode::kValidation, where + ": needs 'source' and 'target'");
      }
      const std::string src = node_id(link["source"], where);
      const std::string dst = node_id(link["target"], where);
      if (!graph.find(src) || !graph.find(dst)) {
        throw Error(ErrorCode::kValidation, where + " (" + src + " -> " + dst + "): dangling endpoint '" +
                                                (graph.find(src) ? dst : src) + "'");
      }
      graph.add_call(src, dst);
    }
  }
  return graph;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to '" + path.string() + "'");
}

namespace {

std::string string_field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(ErrorCode::kValidation, where + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

json label_to_json(const CompileLabel& l) {
  return json{{"project", l.project},
              {"binary_name", l.binary_name},
              {"architecture", l.architecture},
              {"bitness", l.bitness},
              {"compiler", l.compiler},
              {"compiler_version", l.compiler_version},
              {"optimization", l.optimization}};
}

CompileLabel label_from_json(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::kValidation, where + ": label must be an object");
  CompileLabel l;
  l.project = string_field(obj, "project", where);
  l.binary_name = string_field(obj, "binary_name", where);
  l.architecture = string_field(obj, "architecture", where);
  auto bits = obj.find("bitness");
  if (bits == obj.end() || !bits->is_number_integer()) {
    throw Error(ErrorCode::kValidation, where + ": missing integer field 'bitness'");
  }
  l.bitness = bits->get<int>();
  l.compiler = string_field(obj, "compiler", where);
  l.compiler_version = string_field(obj, "compiler_version", where);
  l.optimization = string_field(obj, "optimization", where);
  l.validate();
  return l;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path) {
  const json doc = parse_json(read_file(manifest_path), "manifest '" + manifest_path.string() + "'");
  const json* entries = &doc;
  if (doc.is_object() && doc.contains("binaries")) entries = &doc["binaries"];
  if (!entries->is_array()) throw Error(ErrorCode::kValidation, "manifest: expected a list of entries");
  const auto base = manifest_path.parent_path();
  std::vector<ManifestEntry> out;
  for (size_t i = 0; i < entries->size(); ++i) {
    const std::string where = "manifest entry " + std::to_string(i);
    const json& e = (*entries)[i];
    if (!e.is_object()) throw Error(ErrorCode::kValidation, where + ": must be an object");
    ManifestEntry entry;
    entry.path = string_field(e, "path", where);
    if (entry.path.is_relative()) entry.path = base / entry.path;
    entry.label = label_from_json(e, where);
    out.push_back(std::move(entry));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline stages

std::vector<CorpusRecord> fuse(const GlobalCallGraph& graph, const CompileLabel& label) {
  label.validate();
  std::vector<CorpusRecord> out;
  out.reserve(graph.size());
  for (size_t i = 0; i < graph.size(); ++i) {
    CorpusRecord rec;
    rec.function_id = label.project + "::" + graph.meta(i).name;
    rec.label = label;
    rec.graphlet = build_call_graphlet(graph, i);
    rec.digest = canonical_digest(rec.graphlet);
    out.push_back(std::move(rec));
  }
  return out;
}

Corpus build_corpus(const std::filesystem::path& manifest_path, int workers) {
  const auto entries = read_manifest(manifest_path);
  std::vector<std::vector<CorpusRecord>> per_binary(entries.size());
  parallel_for(entries.size(), workers, [&](size_t i) {
    const auto& entry = entries[i];
    try {
      const auto graph = parse_export(read_file(entry.path), entry.label.binary_name);
      per_binary[i] = fuse(graph, entry.label);
    } catch (const Error& e) {
      throw Error(e.code(), entry.path.string() + ": " + e.what());
    }
  });
  Corpus corpus;
  for (size_t i = 0; i < entries.size(); ++i) {
    corpus.provenance.sources.push_back(entries[i].path.string());
    for (auto& rec : per_binary[i]) corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

Corpus deduplicate(Corpus corpus, DedupScope scope) {
  if (corpus.provenance.augmented) {
    throw Error(ErrorCode::kStageOrder, "deduplicate: corpus is already augmented");
  }
  if (corpus.provenance.dedup) {
    throw Error(ErrorCode::kStageOrder, "deduplicate: corpus was already deduplicated (scope " +
                                            std::string(dedup_scope_name(*corpus.provenance.dedup)) + ")");
  }
  if (scope != DedupScope::kNone) {
    std::map<CompileLabel, std::unordered_set<GraphletDigest, GraphletDigestHash>> seen;
    std::vector<CorpusRecord> kept;
    kept.reserve(corpus.records.size());
    const CompileLabel global_key;
    for (auto& rec : corpus.records) {
      auto& group = seen[scope == DedupScope::kGlobal ? global_key : rec.label];
      if (group.insert(rec.digest).second) kept.push_back(std::move(rec));
    }
    corpus.records = std::move(kept);
  }
  corpus.provenance.dedup = scope;
  return corpus;
}

Corpus augment(Corpus corpus) {
  if (!corpus.provenance.dedup) {
    throw Error(ErrorCode::kStageOrder, "augment: corpus has not been deduplicated");
  }
  if (corpus.provenance.sampled) {
    throw Error(ErrorCode::kStageOrder, "augment: corpus has already been sampled");
  }
  for (auto& rec : corpus.records) rec.graphlet = compute_edge_betweenness(std::move(rec.graphlet));
  corpus.provenance.augmented = true;
  return corpus;
}

Corpus sample(Corpus corpus, size_t n, uint64_t seed) {
  if (!corpus.provenance.augmented) {
    throw Error(ErrorCode::kStageOrder, "sample: corpus has not been augmented");
  }
  if (n > corpus.records.size()) {
    throw Error(ErrorCode::kInvalidArgument, "sample: requested " + std::to_string(n) + " records but only " +
                                                 std::to_string(corpus.records.size()) + " are available");
  }
  Rng rng(derive_seed(seed, 0x73616d706c65ULL));
  auto picked = rng.sample_without_replacement(corpus.records.size(), n);
  std::sort(picked.begin(), picked.end());
  std::vector<CorpusRecord> kept;
  kept.reserve(n);
  for (size_t idx : picked) kept.push_back(std::move(corpus.records[idx]));
  corpus.records = std::move(kept);
  corpus.provenance.sampled = SampleInfo{n, seed};
  return corpus;
}

std::pair<Corpus, Corpus> split_by_identity(const Corpus& corpus, size_t holdout_identities, uint64_t seed) {
  std::vector<std::string> identities;
  std::map<std::string, size_t> position;
  for (const auto& rec : corpus.records) {
    if (position.emplace(rec.function_id, identities.size()).second) identities.push_back(rec.function_id);
  }
  if (holdout_identities > identities.size()) {
    throw Error(ErrorCode::kInvalidArgument, "split: requested " + std::to_string(holdout_identities) +
                                                 " held-out identities but only " +
                                                 std::to_string(identities.size()) + " exist");
  }
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  std::vector<bool> held(identities.size(), false);
  for (size_t idx : rng.sample_without_replacement(identities.size(), holdout_identities)) held[idx] = true;
  std::pair<Corpus, Corpus> out;
  out.first.provenance = corpus.provenance;
  out.second.provenance = corpus.provenance;
  for (const auto& rec : corpus.records) {
    (held[position.at(rec.function_id)] ? out.second : out.first).records.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus file format: one header line, then one JSON record per line.

namespace {

constexpr const char* kCorpusFormatName = "kyn-corpus";

json graphlet_to_json(const CallGraphlet& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    nodes.push_back(json{{"id", n.name}, {"role", node_role_name(n.role)}, {"features", n.features}});
  }
  json links = json::array();
  for (const auto& e : g.edges) {
    json link{{"source", e.src}, {"target", e.dst}};
    if (e.weight) link["weight"] = *e.weight;
    links.push_back(std::move(link));
  }
  return json{{"directed", true}, {"target", g.target_index}, {"nodes", std::move(nodes)}, {"links", std::move(links)}};
}

CallGraphlet graphlet_from_json(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::kValidation, where + ": graphlet must be an object");
  CallGraphlet g;
  g.target_index = obj.at("target").get<int>();
  for (const auto& n : obj.at("nodes")) {
    GraphletNode node;
    node.name = n.at("id").get<std::string>();
    node.role = parse_node_role(n.at("role").get<std::string>());
    const auto& f = n.at("features");
    if (!f.is_array() || f.size() != kNumNodeFeatures) {
      throw Error(ErrorCode::kValidation, where + ": node features must have 6 entries");
    }
    for (int i = 0; i < kNumNodeFeatures; ++i) node.features[i] = f[i].get<double>();
    g.nodes.push_back(std::move(node));
  }
  for (const auto& l : obj.at("links")) {
    GraphletEdge e;
    e.src = l.at("source").get<int>();
    e.dst = l.at("target").get<int>();
    if (auto w = l.find("weight"); w != l.end()) e.weight = w->get<double>();
    g.edges.push_back(e);
  }
  g.validate();
  return g;
}

json header_to_json(const Corpus& c) {
  const auto& p = c.provenance;
  json header{{"format", kCorpusFormatName},
              {"version", kCorpusFormatVersion},
              {"records", c.records.size()},
              {"sources", p.sources},
              {"augmented", p.augmented}};
  header["dedup"] = p.dedup ? json(dedup_scope_name(*p.dedup)) : json(nullptr);
  header["sampled"] = p.sampled ? json{{"n", p.sampled->n}, {"seed", p.sampled->seed}} : json(nullptr);
  return header;
}

}  // namespace

std::string serialize_corpus(const Corpus& corpus) {
  std::string out = header_to_json(corpus).dump();
  out.push_back('\n');
  for (const auto& rec : corpus.records) {
    json line{{"function_id", rec.function_id},
              {"label", label_to_json(rec.label)},
              {"digest", rec.digest.hex()},
              {"graphlet", graphlet_to_json(rec.graphlet)}};
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

Corpus parse_corpus(std::string_view text) {
  std::vector<std::string_view> lines;
  size_t start = 0;
  bool truncated = false;
  while (start < text.size()) {
    const size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(start));
      truncated = true;
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::kParse, "corpus: empty file (missing header)");

  json header;
  try {
    header = json::parse(lines[0]);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, "corpus line 1: malformed header at byte " + std::to_string(e.byte));
  }
  if (!header.is_object() || header.value("format", "") != kCorpusFormatName) {
    throw Error(ErrorCode::kUnsupportedFormat, "corpus: not a kyn-corpus file");
  }
  if (!header.contains("version") || header["version"] != kCorpusFormatVersion) {
    throw Error(ErrorCode::kUnsupportedFormat, "corpus: unsupported format version " +
                                                   (header.contains("version") ? header["version"].dump() : "<none>") +
                                                   " (expected " + std::to_string(kCorpusFormatVersion) + ")");
  }
  if (truncated) {
    throw Error(ErrorCode::kParse, "corpus line " + std::to_string(lines.size()) + ": truncated record (no line terminator)");
  }

  Corpus corpus;
  try {
    auto& p = corpus.provenance;
    p.sources = header.at("sources").get<std::vector<std::string>>();
    p.augmented = header.at("augmented").get<bool>();
    if (!header.at("dedup").is_null()) p.dedup = parse_dedup_scope(header["dedup"].get<std::string>());
    if (!header.at("sampled").is_null()) {
      p.sampled = SampleInfo{header["sampled"].at("n").get<size_t>(), header["sampled"].at("seed").get<uint64_t>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("corpus line 1: bad header: ") + e.what());
  }
  const size_t expected = header.value("records", size_t{0});

  corpus.records.reserve(lines.size() - 1);
  for (size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "corpus line " + std::to_string(i + 1);
    json line;
    try {
      line = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParse, where + ": malformed record at byte " + std::to_string(e.byte));
    }
    CorpusRecord rec;
    try {
      rec.function_id = line.at("function_id").get<std::string>();
      rec.label = label_from_json(line.at("label"), where);
      rec.digest = GraphletDigest::from_hex(line.at("digest").get<std::string>());
      rec.graphlet = graphlet_from_json(line.at("graphlet"), where);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
    if (rec.function_id.empty()) throw Error(ErrorCode::kValidation, where + ": empty function_id");
    if (canonical_digest(rec.graphlet) != rec.digest) {
      throw Error(ErrorCode::kValidation, where + ": digest does not match graphlet");
    }
    corpus.records.push_back(std::move(rec));
  }
  if (corpus.records.size() != expected) {
    throw Error(ErrorCode::kParse, "corpus: header announces " + std::to_string(expected) + " records but " +
                                       std::to_string(corpus.records.size()) + " were read (truncated file?)");
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file(path, serialize_corpus(corpus));
}

Corpus read_corpus(const std::filesystem::path& path) {
  try {
    return parse_corpus(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace kyn
