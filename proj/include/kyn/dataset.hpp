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

// Corpus construction: export parsing, fusion into per-function graphlets,
// deduplication, betweenness augmentation, sampling and the line-delimited
// corpus file format.
//
// Stage order is fuse -> deduplicate -> augment -> sample. Each stage checks
// the provenance flags left by the previous one and throws
// Error(kStageOrder) when called out of order.

#ifndef KYN_DATASET_HPP
#define KYN_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kyn/graphlet.hpp"

namespace kyn {

struct CompileLabel {
  std::string project;
  std::string binary_name;
  std::string architecture;
  int bitness = 64;
  std::string compiler;
  std::string compiler_version;
  std::string optimization;

  // Bitness must agree with architecture tags that encode one (arm32, x86-64,
  // mips64, x86, ...). Throws Error(kValidation).
  void validate() const;

  bool operator==(const CompileLabel&) const = default;
  auto operator<=>(const CompileLabel&) const = default;
};

struct CorpusRecord {
  std::string function_id;  // project "::" function name
  CompileLabel label;
  CallGraphlet graphlet;
  GraphletDigest digest;

  bool operator==(const CorpusRecord&) const = default;
};

enum class DedupScope { kBinary, kGlobal, kNone };

const char* dedup_scope_name(DedupScope scope);
// Accepts "binary", "global" and "none". Throws Error(kInvalidArgument).
DedupScope parse_dedup_scope(std::string_view name);

struct SampleInfo {
  size_t n = 0;
  uint64_t seed = 0;

  bool operator==(const SampleInfo&) const = default;
};

struct Provenance {
  std::vector<std::string> sources;
  // Set once deduplication has run. kNone records an explicit decision to
  // keep duplicates, which still satisfies the augmentation precondition.
  std::optional<DedupScope> dedup;
  bool augmented = false;
  std::optional<SampleInfo> sampled;

  bool operator==(const Provenance&) const = default;
};

struct Corpus {
  std::vector<CorpusRecord> records;
  Provenance provenance;

  size_t size() const { return records.size(); }
  bool operator==(const Corpus&) const = default;
};

// Parses one node-link export document. Throws Error(kParse) with the byte
// offset for malformed JSON and Error(kValidation) for structural problems.
GlobalCallGraph parse_export(std::string_view document, std::string binary_id = {});

struct ManifestEntry {
  std::filesystem::path path;
  CompileLabel label;
};

// Relative export paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path);

// One record per function, graphlets unweighted, digests filled in.
std::vector<CorpusRecord> fuse(const GlobalCallGraph& graph, const CompileLabel& label);

// Parses and fuses every manifest entry; records keep manifest order.
Corpus build_corpus(const std::filesystem::path& manifest_path, int workers = 1);

Corpus deduplicate(Corpus corpus, DedupScope scope = DedupScope::kBinary);
Corpus augment(Corpus corpus);
Corpus sample(Corpus corpus, size_t n, uint64_t seed);

// Splits by function identity: `holdout_identities` identities, drawn
// uniformly, go to the second corpus. Provenance is copied to both.
std::pair<Corpus, Corpus> split_by_identity(const Corpus& corpus, size_t holdout_identities,
                                            uint64_t seed);

inline constexpr int kCorpusFormatVersion = 1;

std::string serialize_corpus(const Corpus& corpus);
Corpus parse_corpus(std::string_view text);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

// Shared file helpers. Both throw Error(kIo).
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace kyn

#endif  // KYN_DATASET_HPP
