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

#include "kgboot/threshold_search.hpp"

#include <gtest/gtest.h>

#include <map>

#include "kgboot/toy_backend.hpp"

namespace kgboot {
namespace {

std::function<double(double)> Curve(std::map<double, double> scores, std::vector<double>* calls) {
  return [scores = std::move(scores), calls](double b) {
    if (calls) calls->push_back(b);
    for (const auto& [k, v] : scores) {
      if (std::abs(k - b) < 1e-9) return v;
    }
    return 0.0;
  };
}

TEST(SearchThreshold, ReturnsLastImprovingValue) {
  std::vector<double> calls;
  const auto r = SearchThreshold(Curve({{0.20, 0.30}, {0.25, 0.35}, {0.30, 0.35}}, &calls), 0.1);
  EXPECT_DOUBLE_EQ(r.threshold, 0.25);
  EXPECT_EQ(calls, (std::vector<double>{0.2, 0.25, 0.3}));
  EXPECT_FALSE(r.warning.has_value());
  EXPECT_FALSE(r.trials.back().improved);
}

TEST(SearchThreshold, LiteralReadingReturnsStoppingValue) {
  const auto r = SearchThreshold(Curve({{0.20, 0.30}, {0.25, 0.35}, {0.30, 0.31}}, nullptr), 0.1,
                                 {}, ThresholdPick::kLastTried);
  EXPECT_DOUBLE_EQ(r.threshold, 0.3);
}

TEST(SearchThreshold, OnlyFirstImproves) {
  const auto r = SearchThreshold(Curve({{0.20, 0.30}, {0.25, 0.20}}, nullptr), 0.1);
  EXPECT_DOUBLE_EQ(r.threshold, 0.2);
  EXPECT_EQ(r.trials.size(), 2u);
}

TEST(SearchThreshold, NothingImprovesWarnsAndReturnsStart) {
  const auto r = SearchThreshold(Curve({{0.20, 0.10}}, nullptr), 0.1);
  EXPECT_DOUBLE_EQ(r.threshold, 0.2);
  EXPECT_TRUE(r.warning.has_value());
  EXPECT_EQ(r.trials.size(), 1u);
}

TEST(SearchThreshold, MonotoneCurveConsumesWholeGrid) {
  for (int max_steps = 1; max_steps <= 17; ++max_steps) {
    std::vector<double> calls;
    const auto r = SearchThreshold(
        [&](double b) {
          calls.push_back(b);
          return b;
        },
        0.0, {.start = 0.2, .step = 0.05, .max_steps = max_steps});
    EXPECT_EQ(static_cast<int>(calls.size()), max_steps);
    EXPECT_DOUBLE_EQ(r.threshold, GridValue({.start = 0.2, .step = 0.05}, max_steps - 1));
  }
  // The grid stops at 1.
  std::vector<double> calls;
  SearchThreshold([&](double b) { calls.push_back(b); return b; }, 0.0,
                  {.start = 0.2, .step = 0.05, .max_steps = 100});
  EXPECT_EQ(calls.size(), 17u);
  EXPECT_DOUBLE_EQ(calls.back(), 1.0);
}

TEST(SearchThreshold, ResultIsAlwaysGridPoint) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_real_distribution<double> u(0, 1);
    const int max_steps = 1 + static_cast<int>(rng() % 8);
    int n = 0;
    const auto r = SearchThreshold([&](double) { ++n; return u(rng); }, u(rng),
                                   {.start = 0.2, .step = 0.05, .max_steps = max_steps});
    EXPECT_LE(n, max_steps);
    bool on_grid = false;
    for (int i = 0; i < max_steps; ++i) on_grid |= r.threshold == GridValue({}, i);
    EXPECT_TRUE(on_grid);
  }
}

TEST(SearchThreshold, RejectsBadGrid) {
  EXPECT_THROW(SearchThreshold([](double) { return 0.0; }, 0.0, {.max_steps = 0}), Error);
  EXPECT_THROW(SearchThreshold([](double) { return 0.0; }, 0.0, {.step = 0.0}), Error);
}

TEST(SearchTaskThreshold, ScratchTrialsLeaveMainBackendUntouched) {
  std::vector<Example> train, validation;
  for (int i = 0; i < 12; ++i) {
    Example ex;
    ex.id = "e" + std::to_string(i);
    ex.task = "qa";
    ex.context = {{Speaker::kUser, "question number " + std::to_string(i)}};
    ex.target = "answer " + std::to_string(i);
    (i < 8 ? train : validation).push_back(ex);
  }
  ToyBackend main(2, {.copy_bias = 0.5});
  const std::string before = main.Save().dump();
  ThresholdSearchSetup setup;
  setup.backend = &main;
  setup.train = train;
  setup.validation = validation;
  setup.config.tasks["qa"] = {.threshold = 0.4, .modules = {.search = false, .entity = false, .memory = false}};
  setup.config.n0 = 10;
  setup.task = "qa";
  const auto r = SearchTaskThreshold(setup, {.max_steps = 4});
  EXPECT_LE(r.trials.size(), 4u);
  EXPECT_EQ(main.Save().dump(), before);
  EXPECT_EQ(main.Version(), "0");
}

TEST(Thresholds, FileRoundTripAndOverride) {
  const auto dir = std::filesystem::temp_directory_path() / "kgboot_thresholds_test";
  SaveThresholds(dir / "t.json", {{"qa", 0.25}, {"trivia", 0.99}});
  const auto back = LoadThresholds(dir / "t.json");
  EXPECT_DOUBLE_EQ(back.at("qa"), 0.25);
  EXPECT_DOUBLE_EQ(back.at("trivia"), 0.99);
  BootstrapConfig config;
  ApplyThresholds(config, back);
  EXPECT_DOUBLE_EQ(config.Task("trivia").threshold, 0.99);
  EXPECT_TRUE(MatchGate("yuri gagarin", "Yuri Gagarin", config.Task("trivia").threshold));
  EXPECT_FALSE(MatchGate("yuri gagarin in", "Yuri Gagarin", config.Task("trivia").threshold));

  WriteFileAtomic(dir / "bad.json", R"({"qa": 1.5})");
  EXPECT_THROW(LoadThresholds(dir / "bad.json"), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace kgboot
