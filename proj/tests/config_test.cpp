// Copyright 2026 The kgboot Authors.
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

#include "kgboot/config.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "kgboot/io.hpp"

namespace kgboot {
namespace {

namespace fs = std::filesystem;

struct EnvGuard {
  EnvGuard() { unsetenv(kBackendUrlEnv); }
  ~EnvGuard() { unsetenv(kBackendUrlEnv); }
};

TEST(ConfigTest, DefaultsAndPaths) {
  EnvGuard env;
  const auto c = ParseRunConfig("[run]\nseed = 9\ntrain = data/train.jsonl\ntest = /abs/test.jsonl\n", "/cfg");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train, fs::path("/cfg/data/train.jsonl"));
  EXPECT_EQ(c.test, fs::path("/abs/test.jsonl"));
  EXPECT_EQ(c.bootstrap.k, 5);
  EXPECT_EQ(c.bootstrap.h, 4);
  EXPECT_EQ(c.bootstrap.n0, 200);
  EXPECT_DOUBLE_EQ(c.bootstrap.learning_rate, 2e-6);
  EXPECT_EQ(c.bootstrap.seed, c.Substream("bootstrap"));
}

TEST(ConfigTest, UnknownKeyIsAConfigError) {
  EnvGuard env;
  try {
    ParseRunConfig("[bootstrap]\nkk = 3\n", "/");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("bootstrap.kk"), std::string::npos);
  }
  EXPECT_THROW(ParseRunConfig("[nosuch]\nx = 1\n", "/"), Error);
  EXPECT_THROW(ParseRunConfig("[bootstrap]\nk = five\n", "/"), Error);
  EXPECT_THROW(ParseRunConfig("[bootstrap]\nk = 0\n", "/"), Error);
  EXPECT_THROW(ParseRunConfig("[bootstrap]\nformat = sideways\n", "/"), Error);
}

TEST(ConfigTest, OverridesBeatFileAndEnvFillsUrl) {
  EnvGuard env;
  setenv(kBackendUrlEnv, "http://127.0.0.1:9", 1);
  const auto c = ParseRunConfig("[bootstrap]\nk = 3\n[run]\nbackend = http\n", "/",
                                {"bootstrap.k=7", "task.qa.threshold=0.55", "toy.copy_bias = 0.5"});
  EXPECT_EQ(c.bootstrap.k, 7);
  EXPECT_DOUBLE_EQ(c.bootstrap.tasks.at("qa").threshold, 0.55);
  EXPECT_DOUBLE_EQ(c.toy.copy_bias, 0.5);
  EXPECT_EQ(c.backend_url, "http://127.0.0.1:9");
  EXPECT_THROW(ParseRunConfig("", "/", {"k=7"}), Error);
}

TEST(ConfigTest, HttpBackendNeedsUrl) {
  EnvGuard env;
  EXPECT_THROW(ParseRunConfig("[run]\nbackend = http\n", "/"), Error);
  EXPECT_NO_THROW(ParseRunConfig("[run]\nbackend = http\nbackend_url = http://h:1\n", "/"));
}

TEST(ConfigTest, ModePresetAppliesBeforeExplicitKeys) {
  EnvGuard env;
  const auto star = ParseRunConfig("[bootstrap]\nmode = ground-truth-only\n", "/");
  EXPECT_EQ(star.bootstrap.h, 0);
  const auto mixed = ParseRunConfig("[bootstrap]\nh = 2\nmode = ground-truth-only\n", "/");
  EXPECT_EQ(mixed.bootstrap.h, 2);
  const auto no_retry = ParseRunConfig("[bootstrap]\nmode = no-retry\n", "/");
  EXPECT_FALSE(no_retry.bootstrap.retry);
  EXPECT_THROW(ParseRunConfig("[bootstrap]\nmode = turbo\n", "/"), Error);
}

TEST(ConfigTest, TaskModules) {
  EnvGuard env;
  const auto c = ParseRunConfig("[task.wow]\nmodules = search, memory\nthreshold = 0.3\n", "/");
  const auto& t = c.bootstrap.tasks.at("wow");
  EXPECT_TRUE(t.modules.search);
  EXPECT_FALSE(t.modules.entity);
  EXPECT_TRUE(t.modules.memory);
  EXPECT_DOUBLE_EQ(t.threshold, 0.3);
  EXPECT_THROW(ParseRunConfig("[task.wow]\nmodules = search, dreams\n", "/"), Error);
}

TEST(ConfigTest, ThresholdsFileRespectsFixedTasks) {
  EnvGuard env;
  const fs::path dir = fs::temp_directory_path() / "kgboot_config_test";
  fs::create_directories(dir);
  SaveThresholds(dir / "thresholds.json", {{"qa", 0.35}, {"chat", 0.45}});
  const auto c = ParseRunConfig(
      "[run]\nthresholds_file = thresholds.json\n[task.chat]\nfixed_threshold = true\nthreshold = 0.6\n", dir);
  EXPECT_DOUBLE_EQ(c.bootstrap.tasks.at("qa").threshold, 0.35);
  EXPECT_DOUBLE_EQ(c.bootstrap.tasks.at("chat").threshold, 0.6);
  fs::remove_all(dir);
}

TEST(ConfigTest, LoadMissingFile) {
  EnvGuard env;
  try {
    LoadRunConfig("/nonexistent/kgboot.ini");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

}  // namespace
}  // namespace kgboot
