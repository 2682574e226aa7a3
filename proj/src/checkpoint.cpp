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

#include "kyn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "kyn/dataset.hpp"
#include "kyn/error.hpp"

namespace kyn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'K', 'Y', 'N', 'C', 'K', 'P', 'T', '\0'};

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) {
  const uint32_t bits = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float read_f32(const unsigned char* p) {
  const uint32_t bits = static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                        static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
  return std::bit_cast<float>(bits);
}

void add_blocks(const ModelParams<float>& params, const std::string& prefix, json& table, std::string& blob,
                uint64_t& offset) {
  params.for_each_block([&](const std::string& name, const float* data, Eigen::Index rows, Eigen::Index cols) {
    table.push_back(json{{"name", prefix + name}, {"shape", {rows, cols}}, {"offset", offset}});
    for (Eigen::Index i = 0; i < rows * cols; ++i) append_f32(blob, data[i]);
    offset += static_cast<uint64_t>(rows * cols);
  });
}

struct BlockRef {
  int64_t rows;
  int64_t cols;
  uint64_t offset;
};

void fill_blocks(ModelParams<float>& params, const std::string& prefix, const std::map<std::string, BlockRef>& table,
                 const unsigned char* blob, uint64_t blob_floats) {
  params.for_each_block([&](const std::string& name, float* data, Eigen::Index rows, Eigen::Index cols) {
    auto it = table.find(prefix + name);
    if (it == table.end()) throw Error(ErrorCode::kStructural, "checkpoint: missing block " + prefix + name);
    const BlockRef& ref = it->second;
    if (ref.rows != rows || ref.cols != cols) {
      throw Error(ErrorCode::kStructural, "checkpoint: block " + prefix + name + " has shape " +
                                              std::to_string(ref.rows) + "x" + std::to_string(ref.cols) +
                                              " but the model config expects " + std::to_string(rows) + "x" +
                                              std::to_string(cols));
    }
    const uint64_t count = static_cast<uint64_t>(rows * cols);
    if (ref.offset + count > blob_floats) throw Error(ErrorCode::kStructural, "checkpoint: block " + prefix + name + " overruns the blob");
    for (uint64_t i = 0; i < count; ++i) data[i] = read_f32(blob + 4 * (ref.offset + i));
  });
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.params.check_shapes(ckpt.model_config);
  json table = json::array();
  std::string blob;
  uint64_t offset = 0;
  add_blocks(ckpt.params, "", table, blob, offset);
  json manifest{{"format_version", kCheckpointFormatVersion},
                {"model_config", ckpt.model_config.to_json()},
                {"seed", ckpt.seed}};
  if (ckpt.train_config) manifest["train_config"] = *ckpt.train_config;
  if (ckpt.optimizer) {
    manifest["optimizer"] = json{{"step", ckpt.optimizer->step}, {"next_epoch", ckpt.optimizer->next_epoch}};
    add_blocks(ckpt.optimizer->first_moment, "adam.m.", table, blob, offset);
    add_blocks(ckpt.optimizer->second_moment, "adam.v.", table, blob, offset);
  }
  manifest["params"] = std::move(table);
  const std::string header = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  append_u64(out, header.size());
  out += header;
  out += blob;

  // Write-then-rename so an interrupted save never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, out);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  if (data.size() < 16 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kUnsupportedFormat, "'" + path.string() + "' is not a kyn checkpoint");
  }
  uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<uint64_t>(bytes[8 + i]) << (8 * i);
  if (header_len > data.size() - 16) throw Error(ErrorCode::kParse, "checkpoint: truncated manifest");

  json manifest;
  try {
    manifest = json::parse(data.begin() + 16, data.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, "checkpoint: malformed manifest at byte " + std::to_string(e.byte));
  }
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kUnsupportedFormat, "checkpoint: unsupported format version");
  }
  const size_t blob_start = 16 + header_len;
  const size_t blob_bytes = data.size() - blob_start;
  if (blob_bytes % 4 != 0) throw Error(ErrorCode::kParse, "checkpoint: blob is not a whole number of floats");

  Checkpoint ckpt;
  std::map<std::string, BlockRef> table;
  try {
    ckpt.model_config = ModelConfig::from_json(manifest.at("model_config"));
    ckpt.seed = manifest.at("seed").get<uint64_t>();
    if (manifest.contains("train_config")) ckpt.train_config = manifest["train_config"];
    for (const auto& entry : manifest.at("params")) {
      const auto& shape = entry.at("shape");
      table[entry.at("name").get<std::string>()] =
          BlockRef{shape.at(0).get<int64_t>(), shape.at(1).get<int64_t>(), entry.at("offset").get<uint64_t>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("checkpoint: bad manifest: ") + e.what());
  }

  const unsigned char* blob = bytes + blob_start;
  const uint64_t blob_floats = blob_bytes / 4;
  ckpt.params = zero_params(ckpt.model_config);
  fill_blocks(ckpt.params, "", table, blob, blob_floats);
  if (manifest.contains("optimizer")) {
    OptimizerSnapshot opt;
    opt.step = manifest["optimizer"].at("step").get<int64_t>();
    opt.next_epoch = manifest["optimizer"].at("next_epoch").get<int>();
    opt.first_moment = ckpt.params.zeros_like();
    opt.second_moment = ckpt.params.zeros_like();
    fill_blocks(opt.first_moment, "adam.m.", table, blob, blob_floats);
    fill_blocks(opt.second_moment, "adam.v.", table, blob, blob_floats);
    ckpt.optimizer = std::move(opt);
  }
  return ckpt;
}

}  // namespace kyn
