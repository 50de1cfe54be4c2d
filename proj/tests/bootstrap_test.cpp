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

#include "kgboot/bootstrap.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fakes.hpp"
#include "kgboot/toy_backend.hpp"

namespace kgboot {
namespace {

using testing::ScriptedBackend;

Example Qa(std::string id, std::string question, std::string target) {
  Example ex;
  ex.id = std::move(id);
  ex.task = "qa";
  ex.context = {{Speaker::kUser, std::move(question)}};
  ex.target = std::move(target);
  return ex;
}

BootstrapConfig ResponseOnlyConfig() {
  BootstrapConfig config;
  config.tasks["qa"] = {.threshold = 0.4, .modules = {.search = false, .entity = false, .memory = false}};
  return config;
}

TEST(MatchGate, StrictInequality) {
  EXPECT_TRUE(MatchGate(0.25, 0.20));
  EXPECT_FALSE(MatchGate(0.20, 0.20));
  EXPECT_TRUE(MatchGate("yuri gagarin", "yuri gagarin", 0.99));
  EXPECT_FALSE(MatchGate("yuri gagarin", "yuri gagarin", 1.0));
  EXPECT_THROW(MatchGate(0.5, 1.5), Error);
}

TEST(SelectCandidate, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(SelectCandidate({"anything"}, "gt", MetricKind::kRougeL).index, 0u);
  // Similarities 0, 1, 0.5 against "a b".
  const std::vector<std::string> c = {"x y", "a b", "a z"};
  EXPECT_EQ(SelectCandidate(c, "a b", MetricKind::kRougeL).index, 1u);
  EXPECT_EQ(SelectCandidate(c, "a b", MetricKind::kRougeL, CandidateSelection::kLeastSimilar).index,
            0u);
  EXPECT_EQ(SelectCandidate({"a b", "a b"}, "a b", MetricKind::kRougeL).index, 0u);
  EXPECT_THROW(SelectCandidate({}, "gt", MetricKind::kRougeL), Error);
}

TEST(Schedule, LinearGrowthOfBase) {
  EXPECT_EQ(ScheduleSampleCount(0, 4000), 4000);
  EXPECT_EQ(ScheduleSampleCount(1, 4000), 4400);
  EXPECT_EQ(ScheduleSampleCount(2, 4000), 4800);
  EXPECT_EQ(ScheduleSampleCount(5, 200), 300);
  EXPECT_EQ(ScheduleSampleCount(3, 200, 0.0), 200);
  EXPECT_THROW(ScheduleSampleCount(-1, 200), Error);
}

TEST(ResponseSet, OldestFirstEvictionAtCapacity) {
  ResponseSet rs("e", "gt", 3);
  for (int i = 0; i < 10; ++i) {
    rs.Add("r" + std::to_string(i));
    EXPECT_LE(rs.size(), 3u);
  }
  EXPECT_EQ(std::vector<std::string>(rs.unmatched().begin(), rs.unmatched().end()),
            (std::vector<std::string>{"r7", "r8", "r9"}));
  EXPECT_EQ(rs.ground_truth(), "gt");
  ResponseSet none("e", "gt", 0);
  none.Add("x");
  EXPECT_EQ(none.size(), 0u);
}

TEST(GuidedPrompt, FrozenTwoItemOrder) {
  const std::vector<std::string> items = {"He is Neil Armstrong", "Yuri Gagarin"};
  EXPECT_EQ(BuildGuidedPrompt(items, GuidedFormat::kAlphabetical, 3),
            "A. He is Neil Armstrong\nB. Yuri Gagarin");
  EXPECT_EQ(BuildGuidedPrompt(items, GuidedFormat::kAlphabetical, 0),
            "A. Yuri Gagarin\nB. He is Neil Armstrong");
}

TEST(GuidedPrompt, SingleGroundTruth) {
  ResponseSet rs("e", "Yuri Gagarin", 4);
  EXPECT_EQ(BuildGuidedPrompt(GuidedItems(rs, true), GuidedFormat::kAlphabetical, 9),
            "A. Yuri Gagarin");
  EXPECT_TRUE(BuildGuidedPrompt(GuidedItems(rs, false), GuidedFormat::kAlphabetical, 9).empty());
}

TEST(GuidedPrompt, AlternateFormats) {
  const std::vector<std::string> items = {"x"};
  EXPECT_EQ(BuildGuidedPrompt(items, GuidedFormat::kBulleted, 1), "- x");
  EXPECT_EQ(BuildGuidedPrompt(items, GuidedFormat::kAnswerChoices, 1), "Answer Choices:\nA. x");
  const auto parsed = ParsePrompt("user: q\nAnswer Choices:\nA. x\nB. y");
  EXPECT_TRUE(parsed.has_guided);
}

TEST(GuidedPrompt, PermutationPropertyAndDeterminism) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    ResponseSet rs("e", "the truth " + std::to_string(trial), 4);
    const int n = static_cast<int>(rng() % 7);
    for (int i = 0; i < n; ++i) rs.Add("wrong " + std::to_string(rng() % 1000));
    const auto items = GuidedItems(rs, true);
    const std::uint64_t seed = rng();
    const auto text = BuildGuidedPrompt(items, GuidedFormat::kAlphabetical, seed);
    EXPECT_EQ(text, BuildGuidedPrompt(items, GuidedFormat::kAlphabetical, seed));
    const auto lines = SplitLines(text);
    ASSERT_EQ(lines.size(), items.size());
    std::vector<std::string> shown;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string label = AlphabeticalLabel(i) + ". ";
      ASSERT_TRUE(StartsWith(lines[i], label));
      shown.emplace_back(lines[i].substr(label.size()));
    }
    EXPECT_EQ(std::count(shown.begin(), shown.end(), rs.ground_truth()), 1);
    auto a = shown, b = items;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(BootstrapInstance, PretrainedPairAcceptedFirstTry) {
  const auto ex = Qa("q1", "who was the first man in space", "yuri gagarin");
  ToyBackend backend(1, {.copy_bias = 0.0});
  const std::vector<TrainingPair> pairs(20, {ResponsePrompt(ex, {}), "yuri gagarin"});
  backend.Finetune(pairs, 2e-6);
  ResponseSet rs(ex.id, ex.target, 4);
  auto config = ResponseOnlyConfig();
  config.pipeline.temperature = kGreedyTemperature;
  const auto r = BootstrapInstance(backend, nullptr, ex, rs, config, {.seed = 3});
  ASSERT_EQ(r.outcome, Outcome::kAccepted);
  EXPECT_EQ(r.record->response, "yuri gagarin");
  EXPECT_DOUBLE_EQ(r.record->similarity, 1.0);
  EXPECT_FALSE(r.record->via_guided);
  EXPECT_EQ(rs.size(), 0u);
}

TEST(BootstrapInstance, CopyingFromGuidanceSucceedsOnRetry) {
  const auto ex = Qa("q1", "who was the first man in space", "yuri gagarin");
  ToyBackend backend(1, {.copy_bias = 1.0});
  auto config = ResponseOnlyConfig();
  int via_guidance = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    ResponseSet rs(ex.id, ex.target, 4);
    const auto r = BootstrapInstance(backend, nullptr, ex, rs, config, {.seed = seed});
    // Only the question is in the prompt, so the first pass always fails.
    ASSERT_NE(r.outcome, Outcome::kAccepted);
    if (r.outcome == Outcome::kAcceptedViaGuidance) {
      ++via_guidance;
      EXPECT_EQ(r.record->response, "yuri gagarin");
      EXPECT_TRUE(r.record->via_guided);
      EXPECT_EQ(rs.size(), 1u);
    } else {
      EXPECT_EQ(rs.size(), 2u);
    }
  }
  EXPECT_GT(via_guidance, 10);
}

TEST(BootstrapInstance, BothFailuresGrowResponseSetByTwo) {
  ScriptedBackend backend;
  backend.On("response", "garbage output");
  const auto ex = Qa("q1", "who was the first man in space", "yuri gagarin");
  ResponseSet rs(ex.id, ex.target, 4);
  auto config = ResponseOnlyConfig();
  auto r = BootstrapInstance(backend, nullptr, ex, rs, config, {.seed = 1});
  EXPECT_EQ(r.outcome, Outcome::kRejected);
  EXPECT_EQ(rs.size(), 2u);
  r = BootstrapInstance(backend, nullptr, ex, rs, config, {.seed = 2});
  EXPECT_EQ(rs.size(), 4u);
  r = BootstrapInstance(backend, nullptr, ex, rs, config, {.seed = 3});
  EXPECT_EQ(rs.size(), 4u);

  config.retry = false;
  ResponseSet single(ex.id, ex.target, 4);
  BootstrapInstance(backend, nullptr, ex, single, config, {.seed = 1});
  EXPECT_EQ(single.size(), 1u);
}

TEST(BootstrapInstance, WithoutGroundTruthHidesTarget) {
  ScriptedBackend backend;
  backend.On("response", "garbage output");
  const auto ex = Qa("q1", "who was the first man in space", "yuri gagarin");
  ResponseSet rs(ex.id, ex.target, 4);
  auto config = ResponseOnlyConfig();
  ApplyBootstrapMode(config, "without-ground-truth");
  const auto r = BootstrapInstance(backend, nullptr, ex, rs, config, {.seed = 1});
  EXPECT_EQ(r.guided_prompt, "A. garbage output");
}

TEST(BootstrapInstance, RandomGroundTruthsComeFromOtherExamples) {
  ScriptedBackend backend;
  backend.On("response", "garbage output");
  std::vector<Example> data = {Qa("a", "q a", "alpha answer"), Qa("b", "q b", "beta answer"),
                               Qa("c", "q c", "gamma answer")};
  std::vector<const Example*> pool = {&data[0], &data[1], &data[2]};
  auto config = ResponseOnlyConfig();
  ApplyBootstrapMode(config, "random-ground-truths");
  config.h = 3;
  ResponseSet rs("a", "alpha answer", 3);
  const auto r = BootstrapInstance(backend, nullptr, data[0], rs, config,
                                   {.seed = 7, .pool = &pool});
  const auto lines = SplitLines(r.guided_prompt);
  ASSERT_EQ(lines.size(), 4u);
  int own = 0;
  for (const auto& line : lines) {
    const std::string item(line.substr(3));
    EXPECT_NE(item, "garbage output");
    own += item == "alpha answer";
    EXPECT_TRUE(item == "alpha answer" || item == "beta answer" || item == "gamma answer");
  }
  EXPECT_EQ(own, 1);
}

TEST(BootstrapInstance, RetryRegeneratesOrReusesSteps) {
  const auto ex = Qa("q1", "who was the first man in space", "yuri gagarin");
  const auto index = Bm25Index::Build({{"d1", "space", "Yuri Gagarin flew first."}});
  auto config = ResponseOnlyConfig();
  config.tasks["qa"].modules = {.search = true, .entity = true, .memory = false};
  config.k = 2;
  for (const auto mode : {RetrySteps::kRegenerate, RetrySteps::kReuse}) {
    ScriptedBackend backend;
    backend.On("__is-search-required__", "__do-search__");
    backend.On("__generate-query__", "gagarin");
    backend.On("__generate-knowledge__", "he flew");
    backend.On("__generate-entity-knowledge__", "space");
    backend.On("response", "garbage output");
    config.retry_steps = mode;
    ResponseSet rs(ex.id, ex.target, 4);
    const auto r = BootstrapInstance(backend, &index, ex, rs, config, {.seed = 1});
    ASSERT_EQ(r.outcome, Outcome::kRejected);
    int guided_requests = 0;
    for (const auto& req : backend.requests()) {
      guided_requests += req.prompt.find(r.guided_prompt) != std::string::npos;
    }
    EXPECT_EQ(backend.requests().size(), mode == RetrySteps::kRegenerate ? 10u : 6u);
    EXPECT_EQ(guided_requests, mode == RetrySteps::kRegenerate ? 5 : 1);
  }
}

TEST(BootstrapInstance, BackendFailureAborts) {
  ScriptedBackend backend;
  backend.On("__is-search-required__", "__do-search__");
  backend.On("__generate-query__", "");
  const auto ex = Qa("q1", "who", "yuri gagarin");
  const auto index = Bm25Index::Build({{"d1", "t", "body"}});
  auto config = ResponseOnlyConfig();
  config.tasks["qa"].modules.search = true;
  ResponseSet rs(ex.id, ex.target, 4);
  PipelineCounters counters;
  const auto r = BootstrapInstance(backend, &index, ex, rs, config, {.seed = 1, .counters = &counters});
  EXPECT_EQ(r.outcome, Outcome::kAborted);
  EXPECT_EQ(counters.aborted_instances.load(), 1u);
  EXPECT_FALSE(r.error.empty());
}

TEST(TrainingPairs, ExpansionCoversEveryProducedStep) {
  Example ex = Qa("q1", "who was the first man in space", "yuri gagarin");
  ex.memory = {"likes rockets"};
  const auto index = Bm25Index::Build({{"d1", "space", "Yuri Gagarin flew first."}});
  BootstrapRecord r;
  r.example_id = "q1";
  r.steps.search_decision = SearchDecision::kDoSearch;
  r.steps.query = "gagarin";
  r.steps.doc_ids = std::vector<std::string>{"d1"};
  r.steps.search_knowledge = "he flew";
  r.steps.entity_knowledge = "space";
  r.steps.memory_knowledge = "rockets";
  r.response = "yuri gagarin";
  const auto pairs = ExpandTrainingPairs(ex, r, &index, {});
  ASSERT_EQ(pairs.size(), 6u);
  EXPECT_EQ(pairs[0].target, "__do-search__");
  EXPECT_EQ(pairs[1].target, "gagarin");
  EXPECT_NE(pairs[2].input.find("document: Yuri Gagarin flew first."), std::string::npos);
  EXPECT_EQ(pairs[5].input, ResponsePrompt(ex, r.steps));

  r.steps = {};
  r.steps.entity_knowledge = "space";
  const auto fewer = ExpandTrainingPairs(ex, r, &index, {});
  ASSERT_EQ(fewer.size(), 3u);
  EXPECT_EQ(fewer[0].target, "__do-not-search__");
}

std::vector<Example> SmallPool() {
  std::vector<Example> pool;
  const std::vector<std::pair<std::string, std::string>> qa = {
      {"who was the first man in space", "yuri gagarin"},
      {"what is the capital of france", "paris"},
      {"who wrote hamlet", "william shakespeare"},
      {"what is the largest ocean", "the pacific ocean"}};
  for (std::size_t i = 0; i < qa.size(); ++i) {
    pool.push_back(Qa("ex" + std::to_string(i), qa[i].first, qa[i].second));
  }
  return pool;
}

TEST(RunIteration, RecordsPassGateAndGuidanceNeverTrains) {
  const auto pool = SmallPool();
  ToyBackend backend(4, {.copy_bias = 0.5});
  auto config = ResponseOnlyConfig();
  config.n0 = 30;
  ResponseSetStore store(pool, config.h);
  const auto result = RunIteration(backend, nullptr, pool, store, config, 0);
  EXPECT_EQ(result.stats.accepted, 30);
  EXPECT_EQ(result.records.size(), 30u);
  EXPECT_GT(result.stats.accepted_via_guidance, 0);
  EXPECT_EQ(result.stats.version, "1");
  for (const auto& r : result.records) {
    EXPECT_GT(Similarity(r.response, pool[std::stoul(r.example_id.substr(2))].target,
                         MetricKind::kRougeL),
              0.4);
  }
  for (const auto& r : result.records) {
    const auto& ex = pool[std::stoul(r.example_id.substr(2))];
    for (const auto& pair : ExpandTrainingPairs(ex, r, nullptr, config.PipelineFor("qa"))) {
      for (const auto& g : result.guided_prompts) {
        EXPECT_EQ(pair.input.find(g), std::string::npos);
      }
      EXPECT_FALSE(ParsePrompt(pair.input).has_guided);
    }
  }
  for (const auto& [id, rs] : store.sets()) EXPECT_LE(rs.size(), 4u);
}

TEST(RunIteration, BudgetExhaustionEndsWithPartialData) {
  ScriptedBackend backend;
  backend.On("response", "garbage output");
  const auto pool = SmallPool();
  auto config = ResponseOnlyConfig();
  config.n0 = 5;
  config.attempt_budget_factor = 2;
  ResponseSetStore store(pool, config.h);
  const auto result = RunIteration(backend, nullptr, pool, store, config, 0);
  EXPECT_TRUE(result.stats.budget_exhausted);
  EXPECT_EQ(result.stats.attempted, 10);
  EXPECT_EQ(result.stats.accepted, 0);
  EXPECT_DOUBLE_EQ(result.stats.bootstrapping_rate(), 0.0);
  EXPECT_TRUE(backend.trained().empty());
}

TEST(RunIteration, RateIsAcceptedOverAttempted) {
  IterationStats stats;
  stats.attempted = 100;
  stats.accepted = 30;
  EXPECT_DOUBLE_EQ(stats.bootstrapping_rate(), 0.3);
  EXPECT_DOUBLE_EQ(IterationStats{}.bootstrapping_rate(), 0.0);
}

TEST(RunIteration, SameSeedByteIdenticalFiles) {
  const auto pool = SmallPool();
  auto config = ResponseOnlyConfig();
  config.n0 = 40;
  config.seed = 99;
  std::string files[2], states[2];
  for (int run = 0; run < 2; ++run) {
    ToyBackend backend(4, {.copy_bias = 0.3});
    ResponseSetStore store(pool, config.h);
    for (int t = 0; t < 2; ++t) {
      files[run] += SerializeBootstrapFile(RunIteration(backend, nullptr, pool, store, config, t).records);
    }
    states[run] = store.Serialize();
  }
  EXPECT_EQ(files[0], files[1]);
  EXPECT_EQ(states[0], states[1]);
  EXPECT_FALSE(files[0].empty());
}

TEST(RunIteration, FinetuneBatchesCoverAllPairs) {
  const auto pool = SmallPool();
  ScriptedBackend backend;
  backend.On("response", [&](const GenerationRequest& req, int) {
    for (const auto& ex : pool) {
      if (req.prompt.find(ex.context[0].text) != std::string::npos) return ex.target;
    }
    return std::string("none");
  });
  auto config = ResponseOnlyConfig();
  config.n0 = 25;
  config.batch_size = 10;
  ResponseSetStore store(pool, config.h);
  const auto result = RunIteration(backend, nullptr, pool, store, config, 0);
  EXPECT_EQ(result.stats.accepted, 25);
  EXPECT_EQ(result.stats.training_pairs, 25);
  EXPECT_EQ(backend.trained().size(), 25u);
  EXPECT_EQ(result.stats.version, "3");
}

TEST(BootstrapFile, RoundTrip) {
  BootstrapRecord r;
  r.example_id = "x";
  r.iteration = 2;
  r.steps.entity_knowledge = "e";
  r.response = "y";
  r.similarity = 0.625;
  r.via_guided = true;
  const auto dir = std::filesystem::temp_directory_path() / "kgboot_bootstrap_test";
  const auto path = dir / "b.jsonl";
  WriteFileAtomic(path, SerializeBootstrapFile({r, r}));
  const auto back = LoadBootstrapFile(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(SerializeBootstrapFile(back), SerializeBootstrapFile({r, r}));
  const auto j = ToJson(r);
  for (const char* key : {"example_id", "iteration", "steps", "response", "similarity", "via_guided"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  std::filesystem::remove_all(dir);
}

TEST(ResponseSetStore, SerializeRestoreRoundTrip) {
  const auto pool = SmallPool();
  ResponseSetStore store(pool, 2);
  store.Get("ex1").Add("a");
  store.Get("ex1").Add("b");
  store.Get("ex1").Add("c");
  store.Get("ex3").Add("d");
  const auto dir = std::filesystem::temp_directory_path() / "kgboot_rs_test";
  WriteFileAtomic(dir / "rs.jsonl", store.Serialize());
  ResponseSetStore back(pool, 2);
  back.Restore(dir / "rs.jsonl");
  EXPECT_EQ(back.Serialize(), store.Serialize());
  EXPECT_EQ(back.Get("ex1").unmatched().front(), "b");
  EXPECT_THROW(back.Get("nope"), Error);
  std::filesystem::remove_all(dir);
}

TEST(BootstrapConfig, ModesAndValidation) {
  BootstrapConfig c;
  ApplyBootstrapMode(c, "ground-truth-only");
  EXPECT_EQ(c.h, 0);
  EXPECT_TRUE(c.include_ground_truth);
  ApplyBootstrapMode(c, "no-retry");
  EXPECT_FALSE(c.retry);
  ApplyBootstrapMode(c, "least-similar");
  EXPECT_EQ(c.selection, CandidateSelection::kLeastSimilar);
  EXPECT_THROW(ApplyBootstrapMode(c, "bogus"), Error);
  c.k = 0;
  EXPECT_THROW(c.Validate(), Error);
  BootstrapConfig d;
  d.tasks["qa"].threshold = 1.2;
  EXPECT_THROW(d.Validate(), Error);
  EXPECT_THROW(BootstrapConfig{}.Task("missing"), Error);
}

}  // namespace
}  // namespace kgboot
