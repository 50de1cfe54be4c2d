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

#pragma once

// Similarity-gated self-training with guided retries.

#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/error.hpp"
#include "kgboot/io.hpp"
#include "kgboot/pipeline.hpp"
#include "kgboot/retrieval.hpp"
#include "kgboot/rng.hpp"
#include "kgboot/text_metrics.hpp"

namespace kgboot {

enum class GuidedFormat { kAlphabetical, kBulleted, kAnswerChoices };
enum class GuidanceItems { kUnmatched, kRandomGroundTruths };
enum class CandidateSelection { kMostSimilar, kLeastSimilar };
enum class RetrySteps { kRegenerate, kReuse };

struct TaskSettings {
  double threshold = 0.4;
  ModuleMask modules;
  // A fixed threshold is taken as given and never searched.
  bool fixed_threshold = false;
};

struct BootstrapConfig {
  int k = 5;
  int h = 4;
  int n0 = 200;
  double growth = 0.1;
  double learning_rate = 2e-6;
  std::uint64_t seed = 0;
  MetricKind similarity = MetricKind::kRougeL;
  std::map<std::string, TaskSettings> tasks;

  bool retry = true;
  GuidanceItems guidance_items = GuidanceItems::kUnmatched;
  bool include_ground_truth = true;
  GuidedFormat format = GuidedFormat::kAlphabetical;
  CandidateSelection selection = CandidateSelection::kMostSimilar;
  RetrySteps retry_steps = RetrySteps::kRegenerate;
  int retry_samples = 1;

  double attempt_budget_factor = 20.0;
  std::size_t batch_size = 64;
  PipelineOptions pipeline;

  void Validate() const {
    const auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
    if (k < 1) fail("K must be >= 1");
    if (h < 0) fail("H must be >= 0");
    if (n0 < 1) fail("N0 must be >= 1");
    if (growth < 0) fail("growth must be >= 0");
    if (!(learning_rate > 0)) fail("learning rate must be > 0");
    if (retry_samples < 1) fail("retry_samples must be >= 1");
    if (!(attempt_budget_factor >= 1)) fail("attempt budget factor must be >= 1");
    if (batch_size == 0) fail("batch size must be >= 1");
    for (const auto& [task, settings] : tasks) {
      if (!(settings.threshold >= 0 && settings.threshold <= 1)) {
        fail("threshold for task '" + task + "' must be in [0,1]");
      }
    }
  }

  const TaskSettings& Task(const std::string& task) const {
    const auto it = tasks.find(task);
    if (it == tasks.end()) throw Error(ErrorCode::kConfig, "no settings for task '" + task + "'");
    return it->second;
  }

  PipelineOptions PipelineFor(const std::string& task) const {
    PipelineOptions options = pipeline;
    options.modules = Task(task).modules;
    return options;
  }
};

// Named presets for the guidance variants. Each only sets config fields.
inline void ApplyBootstrapMode(BootstrapConfig& config, std::string_view mode) {
  if (mode == "full-guidance") {
    config.retry = true;
    config.guidance_items = GuidanceItems::kUnmatched;
    config.include_ground_truth = true;
    config.selection = CandidateSelection::kMostSimilar;
  } else if (mode == "ground-truth-only") {
    config.retry = true;
    config.h = 0;
    config.guidance_items = GuidanceItems::kUnmatched;
    config.include_ground_truth = true;
  } else if (mode == "no-retry") {
    config.retry = false;
    config.h = 0;
  } else if (mode == "without-ground-truth") {
    config.retry = true;
    config.guidance_items = GuidanceItems::kUnmatched;
    config.include_ground_truth = false;
  } else if (mode == "random-ground-truths") {
    config.retry = true;
    config.guidance_items = GuidanceItems::kRandomGroundTruths;
    config.include_ground_truth = true;
  } else if (mode == "least-similar") {
    config.selection = CandidateSelection::kLeastSimilar;
  } else {
    throw Error(ErrorCode::kConfig, "unknown bootstrap mode '" + std::string(mode) + "'");
  }
}

inline std::int64_t ScheduleSampleCount(int t, int n0, double growth = 0.1) {
  if (t < 0) throw Error(ErrorCode::kInvalidArgument, "iteration index must be >= 0");
  return std::llround(static_cast<double>(n0) * (1.0 + growth * static_cast<double>(t)));
}

inline bool MatchGate(double similarity, double threshold) {
  if (!(threshold >= 0 && threshold <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must be in [0,1]");
  }
  return similarity > threshold;
}

inline bool MatchGate(std::string_view response, std::string_view ground_truth, double threshold,
                      MetricKind kind = MetricKind::kRougeL) {
  return MatchGate(Similarity(response, ground_truth, kind), threshold);
}

struct Selection {
  std::size_t index = 0;
  double similarity = 0.0;
};

// Lowest index wins ties in both directions.
inline Selection SelectCandidate(const std::vector<std::string>& candidates,
                                 std::string_view ground_truth, MetricKind kind,
                                 CandidateSelection mode = CandidateSelection::kMostSimilar) {
  if (candidates.empty()) throw Error(ErrorCode::kEmpty, "select_best_of_k: no candidates");
  Selection best{0, Similarity(candidates[0], ground_truth, kind)};
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = Similarity(candidates[i], ground_truth, kind);
    const bool better =
        mode == CandidateSelection::kMostSimilar ? s > best.similarity : s < best.similarity;
    if (better) best = {i, s};
  }
  return best;
}

class ResponseSet {
 public:
  ResponseSet() = default;
  ResponseSet(std::string example_id, std::string ground_truth, int capacity)
      : example_id_(std::move(example_id)),
        ground_truth_(std::move(ground_truth)),
        capacity_(static_cast<std::size_t>(std::max(capacity, 0))) {}

  void Add(std::string response) {
    unmatched_.push_back(std::move(response));
    while (unmatched_.size() > capacity_) unmatched_.pop_front();
  }

  const std::string& example_id() const { return example_id_; }
  const std::string& ground_truth() const { return ground_truth_; }
  const std::deque<std::string>& unmatched() const { return unmatched_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return unmatched_.size(); }

 private:
  std::string example_id_;
  std::string ground_truth_;
  std::size_t capacity_ = 0;
  std::deque<std::string> unmatched_;  // oldest first
};

inline std::string RenderGuidedItems(const std::vector<std::string>& items, GuidedFormat format) {
  std::string out;
  if (format == GuidedFormat::kAnswerChoices) {
    out += prefix::kAnswerChoices;
    out.push_back('\n');
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (format == GuidedFormat::kBulleted) {
      out += prefix::kBullet;
    } else {
      out += AlphabeticalLabel(i) + ". ";
    }
    out += items[i];
    out.push_back('\n');
  }
  if (!out.empty()) out.pop_back();
  return out;
}

// Items in set order (oldest unmatched first, ground truth last), then a
// seeded shuffle. Returns an empty string when there is nothing to show.
inline std::string BuildGuidedPrompt(std::vector<std::string> items, GuidedFormat format,
                                     std::uint64_t seed) {
  if (items.empty()) return {};
  Rng rng(seed);
  rng.Shuffle(items);
  return RenderGuidedItems(items, format);
}

inline std::vector<std::string> GuidedItems(const ResponseSet& rs, bool include_ground_truth) {
  std::vector<std::string> items(rs.unmatched().begin(), rs.unmatched().end());
  if (include_ground_truth) items.push_back(rs.ground_truth());
  return items;
}

struct BootstrapRecord {
  std::string example_id;
  int iteration = 0;
  IntermediateSteps steps;
  std::string response;
  double similarity = 0.0;
  bool via_guided = false;
};

inline Json ToJson(const BootstrapRecord& r) {
  return Json{{"example_id", r.example_id}, {"iteration", r.iteration},
              {"steps", ToJson(r.steps)},    {"response", r.response},
              {"similarity", r.similarity},  {"via_guided", r.via_guided}};
}

inline BootstrapRecord BootstrapRecordFromJson(const Json& j) {
  BootstrapRecord r;
  r.example_id = j.at("example_id").get<std::string>();
  r.iteration = j.at("iteration").get<int>();
  r.steps = IntermediateStepsFromJson(j.at("steps"));
  r.response = j.at("response").get<std::string>();
  r.similarity = j.at("similarity").get<double>();
  r.via_guided = j.at("via_guided").get<bool>();
  return r;
}

inline std::vector<BootstrapRecord> LoadBootstrapFile(const std::filesystem::path& path) {
  std::vector<BootstrapRecord> records;
  ForEachJsonLine(path, [&](std::size_t line, const Json& j) {
    try {
      records.push_back(BootstrapRecordFromJson(j));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kDataset, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return records;
}

inline std::string SerializeBootstrapFile(const std::vector<BootstrapRecord>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(ToJson(r));
  return ToJsonLines(rows);
}

enum class Outcome { kAccepted, kAcceptedViaGuidance, kRejected, kAborted };

inline std::string_view OutcomeName(Outcome o) {
  switch (o) {
    case Outcome::kAccepted: return "accepted";
    case Outcome::kAcceptedViaGuidance: return "accepted_via_guidance";
    case Outcome::kRejected: return "rejected";
    case Outcome::kAborted: return "aborted";
  }
  return "?";
}

struct InstanceResult {
  Outcome outcome = Outcome::kRejected;
  std::optional<BootstrapRecord> record;
  std::string guided_prompt;  // empty when no retry happened
  std::string error;          // set when aborted
};

// Extra inputs for one attempt.
struct InstanceContext {
  std::uint64_t seed = 0;
  int iteration = 0;
  // Targets of the whole pool, for the random-ground-truth guidance variant.
  const std::vector<const Example*>* pool = nullptr;
  PipelineCounters* counters = nullptr;
};

namespace detail {

inline std::vector<std::string> RandomGroundTruths(const Example& ex,
                                                   const std::vector<const Example*>& pool,
                                                   int count, std::uint64_t seed) {
  std::vector<std::string> out;
  if (count <= 0) return out;
  std::vector<const Example*> others;
  for (const Example* e : pool) {
    if (e->id != ex.id) others.push_back(e);
  }
  Rng rng(seed);
  for (int i = 0; i < count && !others.empty(); ++i) {
    out.push_back(others[rng.Index(others.size())]->target);
  }
  return out;
}

}  // namespace detail

// One attempt: sample, gate, and on failure retry once with the guided block.
inline InstanceResult BootstrapInstance(const Backend& backend, const Bm25Index* index,
                                        const Example& ex, ResponseSet& rs,
                                        const BootstrapConfig& config,
                                        const InstanceContext& ctx) {
  const TaskSettings& task = config.Task(ex.task);
  const PipelineOptions options = config.PipelineFor(ex.task);
  InstanceResult result;
  try {
    ModuleCall call{backend, options, MixSeed(ctx.seed, 1), std::nullopt, ctx.counters};
    IntermediateSteps z = GenerateIntermediateSteps(call, index, ex);
    const auto candidates = GenerateResponse(call, ex, z, config.k);
    const Selection chosen =
        SelectCandidate(candidates, ex.target, config.similarity, config.selection);
    if (MatchGate(chosen.similarity, task.threshold)) {
      result.outcome = Outcome::kAccepted;
      result.record = BootstrapRecord{ex.id, ctx.iteration, std::move(z),
                                      candidates[chosen.index], chosen.similarity, false};
      return result;
    }
    rs.Add(candidates[chosen.index]);
    if (!config.retry) {
      result.outcome = Outcome::kRejected;
      return result;
    }

    std::vector<std::string> items;
    if (config.guidance_items == GuidanceItems::kRandomGroundTruths) {
      static const std::vector<const Example*> kNoPool;
      items = detail::RandomGroundTruths(ex, ctx.pool ? *ctx.pool : kNoPool, config.h,
                                         MixSeed(ctx.seed, 4));
      if (config.include_ground_truth) items.push_back(ex.target);
    } else {
      items = GuidedItems(rs, config.include_ground_truth);
    }
    result.guided_prompt = BuildGuidedPrompt(std::move(items), config.format, MixSeed(ctx.seed, 3));
    if (result.guided_prompt.empty()) {
      result.outcome = Outcome::kRejected;
      return result;
    }

    ModuleCall guided{backend, options, MixSeed(ctx.seed, 2), result.guided_prompt, ctx.counters};
    if (config.retry_steps == RetrySteps::kRegenerate) {
      z = GenerateIntermediateSteps(guided, index, ex);
    }
    const auto retried = GenerateResponse(guided, ex, z, config.retry_samples);
    const Selection second =
        SelectCandidate(retried, ex.target, config.similarity, config.selection);
    if (MatchGate(second.similarity, task.threshold)) {
      result.outcome = Outcome::kAcceptedViaGuidance;
      result.record = BootstrapRecord{ex.id, ctx.iteration, std::move(z), retried[second.index],
                                      second.similarity, true};
      return result;
    }
    rs.Add(retried[second.index]);
    result.outcome = Outcome::kRejected;
  } catch (const Error& e) {
    if (ctx.counters) ++ctx.counters->aborted_instances;
    result.outcome = Outcome::kAborted;
    result.error = e.what();
  }
  return result;
}

// Per-module training targets for one record. Inputs are rebuilt from the
// example and the record, so no guided block can reach them.
inline std::vector<TrainingPair> ExpandTrainingPairs(const Example& ex, const BootstrapRecord& r,
                                                     const Bm25Index* index,
                                                     const PipelineOptions& options) {
  std::vector<TrainingPair> pairs;
  const IntermediateSteps& z = r.steps;
  if (options.modules.search && index != nullptr) {
    pairs.push_back({DecisionPrompt(ex), std::string(ControlTokenText(
                                             z.search_decision == SearchDecision::kDoSearch
                                                 ? ControlToken::kDoSearch
                                                 : ControlToken::kDoNotSearch))});
  }
  if (z.search_decision == SearchDecision::kDoSearch) {
    if (index == nullptr) {
      throw Error(ErrorCode::kInvalidArgument, "record " + r.example_id + " searched but no index");
    }
    pairs.push_back({QueryPrompt(ex), *z.query});
    pairs.push_back({KnowledgePrompt(ex, LookupDocuments(*index, *z.doc_ids),
                                     options.doc_token_budget),
                     *z.search_knowledge});
  }
  if (z.entity_knowledge) pairs.push_back({EntityPrompt(ex), *z.entity_knowledge});
  if (z.memory_knowledge) pairs.push_back({MemoryPrompt(ex), *z.memory_knowledge});
  pairs.push_back({ResponsePrompt(ex, z), r.response});
  return pairs;
}

// All response sets of a run, keyed by example id.
class ResponseSetStore {
 public:
  ResponseSetStore() = default;
  ResponseSetStore(const std::vector<Example>& dataset, int capacity) {
    for (const auto& ex : dataset) sets_.try_emplace(ex.id, ex.id, ex.target, capacity);
  }

  ResponseSet& Get(const std::string& id) {
    const auto it = sets_.find(id);
    if (it == sets_.end()) throw Error(ErrorCode::kDataset, "no response set for '" + id + "'");
    return it->second;
  }
  const std::map<std::string, ResponseSet>& sets() const { return sets_; }
  std::mutex& mutex() { return mu_; }

  std::string Serialize() const {
    std::vector<Json> rows;
    for (const auto& [id, rs] : sets_) {
      rows.push_back({{"example_id", id},
                      {"unmatched", std::vector<std::string>(rs.unmatched().begin(),
                                                             rs.unmatched().end())}});
    }
    return ToJsonLines(rows);
  }

  // Restores unmatched lists saved by Serialize over a store built from the dataset.
  void Restore(const std::filesystem::path& path) {
    ForEachJsonLine(path, [&](std::size_t, const Json& j) {
      ResponseSet& rs = Get(j.at("example_id").get<std::string>());
      ResponseSet fresh(rs.example_id(), rs.ground_truth(), static_cast<int>(rs.capacity()));
      for (const auto& u : j.at("unmatched")) fresh.Add(u.get<std::string>());
      rs = std::move(fresh);
    });
  }

 private:
  std::map<std::string, ResponseSet> sets_;
  std::mutex mu_;
};

struct IterationStats {
  int iteration = 0;
  std::int64_t target = 0;
  std::int64_t attempted = 0;
  std::int64_t accepted = 0;
  std::int64_t accepted_via_guidance = 0;
  std::int64_t rejected = 0;
  std::int64_t aborted = 0;
  std::int64_t training_pairs = 0;
  bool budget_exhausted = false;
  std::string version;

  double bootstrapping_rate() const {
    return attempted == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(attempted);
  }
};

inline Json ToJson(const IterationStats& s) {
  return Json{{"iteration", s.iteration},
              {"target", s.target},
              {"attempted", s.attempted},
              {"accepted", s.accepted},
              {"accepted_via_guidance", s.accepted_via_guidance},
              {"rejected", s.rejected},
              {"aborted", s.aborted},
              {"training_pairs", s.training_pairs},
              {"budget_exhausted", s.budget_exhausted},
              {"bootstrapping_rate", s.bootstrapping_rate()},
              {"version", s.version}};
}

struct IterationResult {
  std::vector<BootstrapRecord> records;
  std::vector<std::string> guided_prompts;  // one per retry, for audits
  IterationStats stats;
};

struct IterationOptions {
  bool finetune = true;
  // Overrides the schedule when set.
  std::optional<std::int64_t> target;
};

// Samples the pool with replacement until N_t records are accepted or the
// attempt budget runs out, then finetunes on the expanded records.
inline IterationResult RunIteration(Backend& backend, const Bm25Index* index,
                                    const std::vector<Example>& dataset, ResponseSetStore& store,
                                    const BootstrapConfig& config, int t,
                                    const IterationOptions& opts = {},
                                    PipelineCounters* counters = nullptr) {
  config.Validate();
  if (dataset.empty()) throw Error(ErrorCode::kEmpty, "run_iteration: empty dataset");
  IterationResult out;
  IterationStats& stats = out.stats;
  stats.iteration = t;
  stats.target = opts.target ? *opts.target : ScheduleSampleCount(t, config.n0, config.growth);
  const auto budget =
      static_cast<std::int64_t>(std::ceil(config.attempt_budget_factor * static_cast<double>(stats.target)));

  std::vector<const Example*> pool;
  pool.reserve(dataset.size());
  for (const auto& ex : dataset) pool.push_back(&ex);

  const std::uint64_t iter_seed = MixSeed(config.seed, static_cast<std::uint64_t>(t));
  Rng sampler(SubstreamSeed(iter_seed, "sampling"));
  const std::uint64_t instance_root = SubstreamSeed(iter_seed, "instances");

  while (stats.accepted < stats.target) {
    if (stats.attempted >= budget) {
      stats.budget_exhausted = true;
      break;
    }
    const Example& ex = dataset[sampler.Index(dataset.size())];
    const InstanceContext ctx{MixSeed(instance_root, static_cast<std::uint64_t>(stats.attempted)),
                              t, &pool, counters};
    InstanceResult r;
    {
      std::lock_guard lock(store.mutex());
      r = BootstrapInstance(backend, index, ex, store.Get(ex.id), config, ctx);
    }
    ++stats.attempted;
    if (!r.guided_prompt.empty()) out.guided_prompts.push_back(r.guided_prompt);
    switch (r.outcome) {
      case Outcome::kAccepted:
      case Outcome::kAcceptedViaGuidance:
        ++stats.accepted;
        if (r.outcome == Outcome::kAcceptedViaGuidance) ++stats.accepted_via_guidance;
        out.records.push_back(std::move(*r.record));
        break;
      case Outcome::kRejected: ++stats.rejected; break;
      case Outcome::kAborted: ++stats.aborted; break;
    }
  }

  std::map<std::string, const Example*> by_id;
  for (const auto& ex : dataset) by_id[ex.id] = &ex;
  std::vector<TrainingPair> pairs;
  for (const auto& record : out.records) {
    const Example& ex = *by_id.at(record.example_id);
    auto expanded = ExpandTrainingPairs(ex, record, index, config.PipelineFor(ex.task));
    pairs.insert(pairs.end(), expanded.begin(), expanded.end());
  }
  stats.training_pairs = static_cast<std::int64_t>(pairs.size());
  if (opts.finetune) {
    for (std::size_t begin = 0; begin < pairs.size(); begin += config.batch_size) {
      const std::size_t end = std::min(pairs.size(), begin + config.batch_size);
      backend.Finetune(std::span<const TrainingPair>(pairs.data() + begin, end - begin),
                       config.learning_rate);
    }
  }
  stats.version = backend.Version();
  return out;
}

}  // namespace kgboot
