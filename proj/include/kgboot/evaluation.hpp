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

// Held-out scoring and offline analyses over bootstrap files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/bootstrap.hpp"
#include "kgboot/error.hpp"
#include "kgboot/io.hpp"
#include "kgboot/pipeline.hpp"
#include "kgboot/retrieval.hpp"
#include "kgboot/rng.hpp"
#include "kgboot/text_metrics.hpp"

namespace kgboot {

// Maps a task id to the pipeline options used for it.
using OptionsForTask = std::function<PipelineOptions(const std::string& task)>;

inline OptionsForTask OptionsFrom(const BootstrapConfig& config) {
  return [&config](const std::string& task) { return config.PipelineFor(task); };
}

// Per-example seed, independent of the example's position in the file.
inline std::uint64_t ExampleSeed(std::uint64_t seed, const Example& ex, std::uint64_t sample = 0) {
  return MixSeed(seed, Fnv1a64(ex.id), sample);
}

struct EvalReport {
  std::map<std::string, MetricReport> per_task;
  std::map<std::string, std::size_t> counts;
  MetricReport overall;  // macro average over tasks
  std::vector<InferenceTrace> traces;
};

namespace detail {

inline MetricReport MacroAverage(const std::map<std::string, MetricReport>& per_task) {
  MetricReport overall;
  if (per_task.empty()) return overall;
  for (const auto& [task, r] : per_task) {
    overall.f1 += r.f1;
    overall.rouge_l += r.rouge_l;
  }
  overall.f1 /= static_cast<double>(per_task.size());
  overall.rouge_l /= static_cast<double>(per_task.size());
  return overall;
}

}  // namespace detail

// Scores traces against their targets. Aborted examples have an empty response.
inline EvalReport ScoreTraces(std::vector<InferenceTrace> traces,
                              const std::map<std::string, const Example*>& by_id) {
  EvalReport report;
  for (const auto& trace : traces) {
    const Example& ex = *by_id.at(trace.example_id);
    auto& r = report.per_task[ex.task];
    r.f1 += TokenF1(Normalize(trace.response), Normalize(ex.target));
    r.rouge_l += RougeL(Normalize(trace.response), Normalize(ex.target));
    ++report.counts[ex.task];
  }
  for (auto& [task, r] : report.per_task) {
    const double n = static_cast<double>(report.counts[task]);
    r.f1 /= n;
    r.rouge_l /= n;
  }
  report.overall = detail::MacroAverage(report.per_task);
  report.traces = std::move(traces);
  return report;
}

inline EvalReport EvalEndToEnd(const Backend& backend, const Bm25Index* index,
                               const std::vector<Example>& test, const OptionsForTask& options,
                               std::uint64_t seed, PipelineCounters* counters = nullptr) {
  if (test.empty()) throw Error(ErrorCode::kEmpty, "eval: empty test set");
  std::vector<InferenceTrace> traces;
  std::map<std::string, const Example*> by_id;
  for (const auto& ex : test) {
    by_id[ex.id] = &ex;
    try {
      traces.push_back(RunInference(backend, index, ex, InferenceMode::kEndToEnd,
                                    options(ex.task), ExampleSeed(seed, ex), counters));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kGeneration) throw;
      if (counters) ++counters->aborted_instances;
      traces.push_back({ex.id, ex.task, {}, std::string(), {}});
    }
  }
  return ScoreTraces(std::move(traces), by_id);
}

struct DiversityReport {
  std::size_t sampled = 0;
  std::size_t matched = 0;
  double matching_rate = 0.0;
  std::optional<double> self_bleu;  // mean over examples with >= 2 matching samples
  std::optional<double> distinct;   // mean over examples with a matching bigram
};

// Diversity of the gate-passing samples of each example.
inline DiversityReport ScoreDiversity(
    const std::vector<std::vector<std::pair<std::string, bool>>>& samples_per_example) {
  DiversityReport report;
  double self_bleu_sum = 0.0, distinct_sum = 0.0;
  std::size_t self_bleu_n = 0, distinct_n = 0;
  for (const auto& samples : samples_per_example) {
    std::vector<TokenSeq> matching;
    for (const auto& [text, ok] : samples) {
      ++report.sampled;
      if (!ok) continue;
      ++report.matched;
      matching.push_back(Normalize(text));
    }
    if (matching.size() >= 2) {
      self_bleu_sum += SelfBleu(matching, 4);
      ++self_bleu_n;
    }
    const bool has_bigram =
        std::any_of(matching.begin(), matching.end(), [](const TokenSeq& s) { return s.size() >= 2; });
    if (has_bigram) {
      distinct_sum += DistinctN(matching, 2);
      ++distinct_n;
    }
  }
  if (report.sampled > 0) {
    report.matching_rate =
        static_cast<double>(report.matched) / static_cast<double>(report.sampled);
  }
  if (self_bleu_n > 0) report.self_bleu = self_bleu_sum / static_cast<double>(self_bleu_n);
  if (distinct_n > 0) report.distinct = distinct_sum / static_cast<double>(distinct_n);
  return report;
}

// Threshold lookup for the gate, by task.
using ThresholdForTask = std::function<double(const std::string& task)>;

inline DiversityReport EvalDiversity(const Backend& backend, const Bm25Index* index,
                                     const std::vector<Example>& test, int samples_per_example,
                                     const OptionsForTask& options,
                                     const ThresholdForTask& threshold, std::uint64_t seed,
                                     MetricKind kind = MetricKind::kRougeL) {
  if (samples_per_example < 2) {
    throw Error(ErrorCode::kInvalidArgument, "diversity: samples_per_example must be >= 2");
  }
  if (test.empty()) throw Error(ErrorCode::kEmpty, "diversity: empty test set");
  std::vector<std::vector<std::pair<std::string, bool>>> all;
  for (const auto& ex : test) {
    auto& samples = all.emplace_back();
    const double b = threshold(ex.task);
    for (int s = 0; s < samples_per_example; ++s) {
      std::string response;
      try {
        response = RunInference(backend, index, ex, InferenceMode::kEndToEnd, options(ex.task),
                                ExampleSeed(seed, ex, static_cast<std::uint64_t>(s)))
                       .response;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kGeneration) throw;
      }
      const bool ok = !response.empty() && MatchGate(response, ex.target, b, kind);
      samples.emplace_back(std::move(response), ok);
    }
  }
  return ScoreDiversity(all);
}

// True when the normalized needle occurs as a contiguous run in the haystack.
inline bool ContainsTokenRun(std::string_view haystack, std::string_view needle) {
  const auto h = Normalize(haystack).tokens;
  const auto n = Normalize(needle).tokens;
  if (n.empty()) return false;
  return std::search(h.begin(), h.end(), n.begin(), n.end()) != h.end();
}

inline std::map<std::string, const Example*> IndexById(const std::vector<Example>& dataset) {
  std::map<std::string, const Example*> by_id;
  for (const auto& ex : dataset) by_id[ex.id] = &ex;
  return by_id;
}

namespace detail {

inline const Example& Lookup(const std::map<std::string, const Example*>& by_id,
                             const std::string& id) {
  const auto it = by_id.find(id);
  if (it == by_id.end()) throw Error(ErrorCode::kDataset, "record for unknown example '" + id + "'");
  return *it->second;
}

}  // namespace detail

// Share of guided-retry records whose query contains the ground truth.
inline double AnalyzeCopyRate(const std::vector<BootstrapRecord>& records,
                              const std::vector<Example>& dataset) {
  if (records.empty()) throw Error(ErrorCode::kEmpty, "analyze: no records");
  const auto by_id = IndexById(dataset);
  std::size_t total = 0, copies = 0;
  for (const auto& r : records) {
    if (!r.via_guided || !r.steps.query) continue;
    ++total;
    copies += ContainsTokenRun(*r.steps.query, detail::Lookup(by_id, r.example_id).target);
  }
  if (total == 0) throw Error(ErrorCode::kEmpty, "analyze: no guided-retry records with queries");
  return static_cast<double>(copies) / static_cast<double>(total);
}

// Mean ROUGE-L between generated knowledge (search, else entity) and the
// ground truth. Tasks in `excluded` are skipped.
inline double AnalyzeKnowledgeOverlap(const std::vector<BootstrapRecord>& records,
                                      const std::vector<Example>& dataset,
                                      const std::set<std::string>& excluded = {}) {
  if (records.empty()) throw Error(ErrorCode::kEmpty, "analyze: no records");
  const auto by_id = IndexById(dataset);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    const Example& ex = detail::Lookup(by_id, r.example_id);
    if (excluded.contains(ex.task)) continue;
    const auto& knowledge = r.steps.search_knowledge ? r.steps.search_knowledge
                                                     : r.steps.entity_knowledge;
    if (!knowledge) continue;
    sum += RougeL(Normalize(*knowledge), Normalize(ex.target));
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::kEmpty, "analyze: no knowledge-bearing records");
  return sum / static_cast<double>(n);
}

inline double BootstrappingRate(std::int64_t accepted, std::int64_t attempted) {
  if (attempted <= 0) throw Error(ErrorCode::kEmpty, "analyze: no attempts");
  return static_cast<double>(accepted) / static_cast<double>(attempted);
}

struct ModuleScores {
  std::map<std::string, MetricReport> modules;  // "query", "knowledge", "response"
  std::map<std::string, std::size_t> counts;
};

struct ModuleWiseReport {
  std::vector<std::string> shared_ids;
  std::vector<ModuleScores> per_backend;
};

// Scores query, knowledge and response modules against gold labels on the
// examples where every backend makes the same search decision.
inline ModuleWiseReport ModuleWiseEval(const std::vector<const Backend*>& backends,
                                       const Bm25Index* index, const std::vector<Example>& test,
                                       const OptionsForTask& options, std::uint64_t seed) {
  if (backends.size() < 2) throw Error(ErrorCode::kInvalidArgument, "module-wise eval needs >= 2 backends");
  if (test.empty()) throw Error(ErrorCode::kEmpty, "module-wise eval: empty test set");
  ModuleWiseReport report;
  report.per_backend.resize(backends.size());
  std::vector<const Example*> shared;
  for (const auto& ex : test) {
    std::set<SearchDecision> decisions;
    for (const Backend* b : backends) {
      const PipelineOptions opts = options(ex.task);
      const ModuleCall call{*b, opts, ExampleSeed(seed, ex), std::nullopt, nullptr};
      decisions.insert(opts.modules.search && index ? DecideSearch(call, ex)
                                                    : SearchDecision::kDoNotSearch);
    }
    if (decisions.size() == 1) {
      shared.push_back(&ex);
      report.shared_ids.push_back(ex.id);
    }
  }
  if (shared.empty()) throw Error(ErrorCode::kEmpty, "module-wise eval: no shared decision paths");

  const auto add = [](ModuleScores& s, const std::string& module, std::string_view out,
                      std::string_view gold) {
    auto& r = s.modules[module];
    r.f1 += TokenF1(Normalize(out), Normalize(gold));
    r.rouge_l += RougeL(Normalize(out), Normalize(gold));
    ++s.counts[module];
  };
  for (std::size_t bi = 0; bi < backends.size(); ++bi) {
    ModuleScores& scores = report.per_backend[bi];
    for (const Example* ex : shared) {
      PipelineOptions opts = options(ex->task);
      opts.modules.memory = false;
      const ModuleCall call{*backends[bi], opts, ExampleSeed(seed, *ex), std::nullopt, nullptr};
      try {
        const SearchDecision d = opts.modules.search && index ? DecideSearch(call, *ex)
                                                              : SearchDecision::kDoNotSearch;
        if (d == SearchDecision::kDoSearch) {
          if (ex->query_gold) add(scores, "query", GenerateQuery(call, *ex), *ex->query_gold);
          if (ex->knowledge_gold) {
            const auto query = ex->query_gold ? *ex->query_gold : GenerateQuery(call, *ex);
            std::vector<std::string> ids;
            for (const auto& hit : index->Retrieve(query, opts.docs_per_query)) ids.push_back(hit.doc_id);
            add(scores, "knowledge", GenerateSearchKnowledge(call, *ex, LookupDocuments(*index, ids)),
                *ex->knowledge_gold);
          }
        }
        IntermediateSteps z = GenerateIntermediateSteps(call, index, *ex, InferenceMode::kModuleWise);
        add(scores, "response", GenerateResponse(call, *ex, z, 1).front(), ex->target);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kGeneration) throw;
      }
    }
    for (auto& [module, r] : scores.modules) {
      r.f1 /= static_cast<double>(scores.counts[module]);
      r.rouge_l /= static_cast<double>(scores.counts[module]);
    }
  }
  return report;
}

// ---- report output ---------------------------------------------------------

// Reports carry six decimals in both the table and the JSON form.
inline double ReportValue(double v) { return std::round(v * 1e6) / 1e6; }

inline std::string FormatScore(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", ReportValue(v));
  return buf;
}

inline Json ToJson(const MetricReport& r) {
  Json j{{"f1", ReportValue(r.f1)}, {"rouge_l", ReportValue(r.rouge_l)}};
  if (r.self_bleu) j["self_bleu"] = ReportValue(*r.self_bleu);
  if (r.distinct) j["distinct"] = ReportValue(*r.distinct);
  if (r.matching_rate) j["matching_rate"] = ReportValue(*r.matching_rate);
  return j;
}

inline Json ToJson(const EvalReport& r) {
  Json tasks = Json::object();
  for (const auto& [task, m] : r.per_task) {
    tasks[task] = ToJson(m);
    tasks[task]["n"] = r.counts.at(task);
  }
  return Json{{"tasks", tasks}, {"overall", ToJson(r.overall)}};
}

inline Json ToJson(const DiversityReport& r) {
  return Json{{"sampled", r.sampled},
              {"matched", r.matched},
              {"matching_rate", ReportValue(r.matching_rate)},
              {"self_bleu", r.self_bleu ? Json(ReportValue(*r.self_bleu)) : Json()},
              {"distinct", r.distinct ? Json(ReportValue(*r.distinct)) : Json()}};
}

inline std::string RenderTable(const EvalReport& r) {
  std::string out = "task                 n      f1        rouge_l\n";
  const auto row = [&](const std::string& name, std::size_t n, const MetricReport& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-20s %-6zu %-9s %s\n", name.c_str(), n,
                  FormatScore(m.f1).c_str(), FormatScore(m.rouge_l).c_str());
    out += buf;
  };
  std::size_t total = 0;
  for (const auto& [task, m] : r.per_task) {
    row(task, r.counts.at(task), m);
    total += r.counts.at(task);
  }
  row("overall(macro)", total, r.overall);
  return out;
}

inline std::string RenderTable(const DiversityReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? FormatScore(*v) : std::string("n/a"); };
  return "matching_rate " + FormatScore(r.matching_rate) + " (" + std::to_string(r.matched) + "/" +
         std::to_string(r.sampled) + ")\nself_bleu4    " + opt(r.self_bleu) +
         "\ndistinct2     " + opt(r.distinct) + "\n";
}

}  // namespace kgboot
