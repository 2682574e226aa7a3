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

// Drives the built `kyn` executable and checks exit codes and outputs.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("kyn-cli-" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

// Runs the CLI with `args`; stdout and stderr land in out.txt and err.txt.
int run(const std::string& args) {
  const std::string cmd = std::string("cd '") + work_dir().string() + "' && '" KYN_CLI_PATH "' " + args +
                          " > out.txt 2> err.txt";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& name) {
  std::ifstream in(work_dir() / name, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTrainFlags = "--epochs 2 --epoch-size 64 --batch-size 16 --hidden 16 --embedding 8";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run("") == 1);
  CHECK(run("synth --out x.jsonl --bogus") == 1);
  CHECK(slurp("err.txt").find("--bogus") != std::string::npos);
  CHECK(slurp("err.txt").find("Usage") != std::string::npos);
  CHECK(run("frobnicate") == 1);
  CHECK(run("evaluate --corpus missing.jsonl --checkpoint missing.ckpt") == 1);
  CHECK(run("--format xml synth --out x.jsonl") == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE("synth, train, evaluate and search") {
  REQUIRE(run("--seed 3 synth --out train.jsonl --identities 60 --variants 3 --holdout 20 --test-out test.jsonl") == 0);
  CHECK(fs::exists(path("train.jsonl")));
  CHECK(fs::exists(path("test.jsonl")));
  const std::string first = slurp("train.jsonl");
  REQUIRE(run("--seed 3 synth --out train.jsonl --identities 60 --variants 3 --holdout 20 --test-out test.jsonl") == 0);
  CHECK(slurp("train.jsonl") == first);
  REQUIRE(run("--seed 4 synth --out other.jsonl --identities 60 --variants 3") == 0);
  CHECK(slurp("other.jsonl") != first);

  REQUIRE(run(std::string("--seed 1 train --corpus train.jsonl --out m.ckpt --metrics-log log1.jsonl ") + kTrainFlags) ==
          0);
  CHECK(slurp("err.txt").find("epoch 2/2") != std::string::npos);
  REQUIRE(run(std::string("--seed 1 --workers 2 train --corpus train.jsonl --out m2.ckpt --metrics-log log2.jsonl ") +
              kTrainFlags) == 0);
  CHECK(slurp("log1.jsonl") == slurp("log2.jsonl"));
  CHECK(slurp("m.ckpt") == slurp("m2.ckpt"));

  REQUIRE(run("--seed 7 evaluate --corpus test.jsonl --checkpoint m.ckpt --pool-sizes 5,10 --num-pools 50") == 0);
  const std::string table = slurp("out.txt");
  CHECK(table.find("R@1") != std::string::npos);
  REQUIRE(run("--seed 7 --workers 3 evaluate --corpus test.jsonl --checkpoint m.ckpt --pool-sizes 5,10 --num-pools 50") ==
          0);
  CHECK(slurp("out.txt") == table);

  REQUIRE(run("--seed 7 --format jsonl evaluate --corpus test.jsonl --checkpoint m.ckpt --pool-sizes 5 --num-pools 20") ==
          0);
  std::istringstream lines(slurp("out.txt"));
  int count = 0;
  for (std::string line; std::getline(lines, line); ++count) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("metric"));
    CHECK(j["pool_size"] == 5);
  }
  CHECK(count == 3);

  // Pool larger than the available identities is a validation error.
  CHECK(run("evaluate --corpus test.jsonl --checkpoint m.ckpt --pool-sizes 500 --num-pools 5") == 1);
  CHECK(slurp("err.txt").find("negative identities") != std::string::npos);

  REQUIRE(run("embed --corpus test.jsonl --checkpoint m.ckpt --out emb.jsonl") == 0);
  std::istringstream emb(slurp("emb.jsonl"));
  std::string line;
  REQUIRE(std::getline(emb, line));
  CHECK(nlohmann::json::parse(line)["embedding"].size() == 8);

  const auto record = nlohmann::json::parse(line);
  const std::string fid = record["function_id"];
  REQUIRE(run("search --corpus test.jsonl --checkpoint m.ckpt --query-function '" + fid + "' --top 3") == 0);
  CHECK(!slurp("out.txt").empty());
  CHECK(run("search --corpus test.jsonl --checkpoint m.ckpt --query-function 'no::such' --top 3") == 1);
}

TEST_CASE("runtime failures exit with 2") {
  REQUIRE(run("--seed 3 synth --out small.jsonl --identities 20 --variants 2") == 0);
  // Output directory that cannot be created.
  fs::create_directories(work_dir() / "ro");
  std::ofstream(work_dir() / "ro" / "file") << "x";
  CHECK(run("--seed 3 synth --out ro/file/nested.jsonl --identities 20 --variants 2") == 2);
}

TEST_CASE("inputs are not modified") {
  REQUIRE(run("--seed 5 synth --out in.jsonl --identities 30 --variants 2") == 0);
  const std::string before = slurp("in.jsonl");
  REQUIRE(run(std::string("train --corpus in.jsonl --out in.ckpt ") + kTrainFlags) == 0);
  REQUIRE(run("evaluate --corpus in.jsonl --checkpoint in.ckpt --pool-sizes 5 --num-pools 5") == 0);
  CHECK(slurp("in.jsonl") == before);
  fs::remove_all(work_dir());
}
