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

// Modular knowledge-grounded inference:
//   decide search -> (query -> retrieve -> search knowledge)
//                 -> entity knowledge -> memory knowledge -> response.
// Every module is one call to the same backend, selected by a control token
// appended after the context.

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/error.hpp"
#include "kgboot/io.hpp"
#include "kgboot/prompt.hpp"
#include "kgboot/retrieval.hpp"
#include "kgboot/rng.hpp"
#include "kgboot/text_metrics.hpp"

namespace kgboot {

enum class Speaker { kUser, kBot };

struct Turn {
  Speaker speaker = Speaker::kUser;
  std::string text;
};

struct Example {
  std::string id;
  std::string task;
  std::vector<Turn> context;
  std::string target;
  std::vector<std::string> memory;
  // Gold intermediate labels; only module-wise evaluation reads them.
  std::optional<std::string> query_gold;
  std::optional<std::string> knowledge_gold;
};

inline Json ToJson(const Example& ex) {
  Json context = Json::array();
  for (const auto& t : ex.context) {
    context.push_back({{"speaker", t.speaker == Speaker::kUser ? "user" : "bot"}, {"text", t.text}});
  }
  Json j{{"id", ex.id}, {"task", ex.task}, {"context", context}, {"target", ex.target},
         {"memory", ex.memory}};
  if (ex.query_gold) j["query_gold"] = *ex.query_gold;
  if (ex.knowledge_gold) j["knowledge_gold"] = *ex.knowledge_gold;
  return j;
}

// `where` prefixes error messages, e.g. "train.jsonl:12".
inline Example ExampleFromJson(const Json& j, const std::string& where) {
  const auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kDataset, where + ": " + what);
  };
  if (!j.is_object()) fail("expected a JSON object");
  const auto str = [&](const char* name) {
    if (!j.contains(name)) fail(std::string("missing field '") + name + "'");
    if (!j[name].is_string()) fail(std::string("field '") + name + "' must be a string");
    return j[name].get<std::string>();
  };
  Example ex;
  ex.id = str("id");
  ex.task = str("task");
  ex.target = str("target");
  if (NormalizedText(ex.target).empty()) fail("empty target");
  if (!j.contains("context") || !j["context"].is_array()) fail("missing array field 'context'");
  for (const auto& turn : j["context"]) {
    if (!turn.is_object() || !turn.contains("speaker") || !turn.contains("text") ||
        !turn["speaker"].is_string() || !turn["text"].is_string()) {
      fail("context turns need string 'speaker' and 'text'");
    }
    const auto speaker = turn["speaker"].get<std::string>();
    if (speaker != "user" && speaker != "bot") fail("speaker must be 'user' or 'bot'");
    ex.context.push_back({speaker == "user" ? Speaker::kUser : Speaker::kBot,
                          turn["text"].get<std::string>()});
  }
  if (ex.context.empty()) fail("empty context");
  if (j.contains("memory")) {
    if (!j["memory"].is_array()) fail("'memory' must be an array of strings");
    for (const auto& m : j["memory"]) {
      if (!m.is_string()) fail("'memory' must be an array of strings");
      ex.memory.push_back(m.get<std::string>());
    }
  }
  if (j.contains("query_gold") && j["query_gold"].is_string()) ex.query_gold = j["query_gold"];
  if (j.contains("knowledge_gold") && j["knowledge_gold"].is_string()) {
    ex.knowledge_gold = j["knowledge_gold"];
  }
  return ex;
}

enum class SearchDecision { kDoSearch, kDoNotSearch };

struct IntermediateSteps {
  SearchDecision search_decision = SearchDecision::kDoNotSearch;
  std::optional<std::string> query;                  // z1
  std::optional<std::vector<std::string>> doc_ids;
  std::optional<std::string> search_knowledge;       // z2
  std::optional<std::string> entity_knowledge;       // z3
  std::optional<std::string> memory_knowledge;       // z4

  // Search fields are present exactly when a search was made.
  bool IsConsistent() const {
    const bool searched = search_decision == SearchDecision::kDoSearch;
    return query.has_value() == searched && doc_ids.has_value() == searched &&
           search_knowledge.has_value() == searched;
  }

  friend bool operator==(const IntermediateSteps&, const IntermediateSteps&) = default;
};

inline Json ToJson(const IntermediateSteps& z) {
  const auto opt = [](const std::optional<std::string>& s) { return s ? Json(*s) : Json(); };
  return Json{{"search_decision",
               z.search_decision == SearchDecision::kDoSearch ? "do_search" : "do_not_search"},
              {"query", opt(z.query)},
              {"doc_ids", z.doc_ids ? Json(*z.doc_ids) : Json()},
              {"search_knowledge", opt(z.search_knowledge)},
              {"entity_knowledge", opt(z.entity_knowledge)},
              {"memory_knowledge", opt(z.memory_knowledge)}};
}

inline IntermediateSteps IntermediateStepsFromJson(const Json& j) {
  IntermediateSteps z;
  const auto decision = j.at("search_decision").get<std::string>();
  if (decision != "do_search" && decision != "do_not_search") {
    throw Error(ErrorCode::kDataset, "bad search_decision '" + decision + "'");
  }
  z.search_decision =
      decision == "do_search" ? SearchDecision::kDoSearch : SearchDecision::kDoNotSearch;
  const auto opt = [&](const char* name) -> std::optional<std::string> {
    if (!j.contains(name) || j[name].is_null()) return std::nullopt;
    return j[name].get<std::string>();
  };
  z.query = opt("query");
  if (j.contains("doc_ids") && !j["doc_ids"].is_null()) {
    z.doc_ids = j["doc_ids"].get<std::vector<std::string>>();
  }
  z.search_knowledge = opt("search_knowledge");
  z.entity_knowledge = opt("entity_knowledge");
  z.memory_knowledge = opt("memory_knowledge");
  return z;
}

// Which optional modules a task runs.
struct ModuleMask {
  bool search = true;
  bool entity = true;
  bool memory = true;
};

enum class InferenceMode { kEndToEnd, kModuleWise };

struct PipelineOptions {
  ModuleMask modules;
  std::size_t docs_per_query = 5;
  std::size_t doc_token_budget = 256;
  double temperature = 1.0;
  double top_p = 0.9;
  int max_tokens = 64;
};

// Counters shared across concurrent instances.
struct PipelineCounters {
  std::atomic<std::uint64_t> unparseable_decisions{0};
  std::atomic<std::uint64_t> aborted_instances{0};
};

// ---- prompt construction ---------------------------------------------------

inline std::string RenderContext(const Example& ex) {
  std::string out;
  for (const auto& turn : ex.context) {
    out += turn.speaker == Speaker::kUser ? prefix::kUser : prefix::kBot;
    out += turn.text;
    out.push_back('\n');
  }
  return out;
}

namespace detail {

inline void AppendGuided(std::string& prompt, const std::optional<std::string>& guided) {
  if (!guided || guided->empty()) return;
  prompt += *guided;
  if (prompt.back() != '\n') prompt.push_back('\n');
}

inline std::string WithControl(std::string prompt, ControlToken token) {
  prompt += ControlTokenText(token);
  return prompt;
}

}  // namespace detail

inline std::string DecisionPrompt(const Example& ex, const std::optional<std::string>& guided = {}) {
  std::string p = RenderContext(ex);
  detail::AppendGuided(p, guided);
  return detail::WithControl(std::move(p), ControlToken::kIsSearchRequired);
}

inline std::string QueryPrompt(const Example& ex, const std::optional<std::string>& guided = {}) {
  std::string p = RenderContext(ex);
  detail::AppendGuided(p, guided);
  return detail::WithControl(std::move(p), ControlToken::kGenerateQuery);
}

// Document sentences, one per line, until the token budget is spent.
inline std::string RenderDocuments(const std::vector<const Document*>& docs,
                                   std::size_t token_budget) {
  std::string out;
  std::size_t used = 0;
  for (const Document* doc : docs) {
    for (const auto& sentence : SplitSentences(doc->body)) {
      const std::size_t len = Normalize(sentence).size();
      if (used + len > token_budget) return out;
      used += len;
      out += prefix::kDocument;
      out += sentence;
      out.push_back('\n');
    }
  }
  return out;
}

inline std::string KnowledgePrompt(const Example& ex, const std::vector<const Document*>& docs,
                                   std::size_t token_budget,
                                   const std::optional<std::string>& guided = {}) {
  std::string p = RenderContext(ex) + RenderDocuments(docs, token_budget);
  detail::AppendGuided(p, guided);
  return detail::WithControl(std::move(p), ControlToken::kGenerateKnowledge);
}

inline std::string EntityPrompt(const Example& ex, const std::optional<std::string>& guided = {}) {
  std::string p = RenderContext(ex);
  detail::AppendGuided(p, guided);
  return detail::WithControl(std::move(p), ControlToken::kGenerateEntityKnowledge);
}

inline std::string MemoryPrompt(const Example& ex, const std::optional<std::string>& guided = {}) {
  std::string p;
  for (const auto& line : ex.memory) {
    p += prefix::kMemory;
    p += line;
    p.push_back('\n');
  }
  p += RenderContext(ex);
  detail::AppendGuided(p, guided);
  return detail::WithControl(std::move(p), ControlToken::kGenerateMemoryKnowledge);
}

// Context, then knowledge fields in the fixed order z2, z3, z4, then the
// optional guided block. No control token.
inline std::string ResponsePrompt(const Example& ex, const IntermediateSteps& z,
                                  const std::optional<std::string>& guided = {}) {
  std::string p = RenderContext(ex);
  const auto add = [&](std::string_view pre, const std::optional<std::string>& field) {
    if (!field) return;
    p += pre;
    p += *field;
    p.push_back('\n');
  };
  add(prefix::kKnowledge, z.search_knowledge);
  add(prefix::kEntity, z.entity_knowledge);
  add(prefix::kMemoryKnowledge, z.memory_knowledge);
  detail::AppendGuided(p, guided);
  return p;
}

// ---- module calls ----------------------------------------------------------

// Module ids mixed into per-call seeds.
enum class ModuleId : std::uint64_t {
  kDecision = 1,
  kQuery,
  kKnowledge,
  kEntity,
  kMemory,
  kResponse,
};

struct ModuleCall {
  const Backend& backend;
  const PipelineOptions& options;
  std::uint64_t seed = 0;
  std::optional<std::string> guided;
  PipelineCounters* counters = nullptr;

  std::vector<std::string> Run(std::string prompt, std::optional<ControlToken> control,
                               ModuleId module, int n = 1) const {
    GenerationRequest req;
    req.prompt = std::move(prompt);
    req.control = control;
    req.n = n;
    req.temperature = options.temperature;
    req.top_p = options.top_p;
    req.max_tokens = options.max_tokens;
    req.seed = MixSeed(seed, static_cast<std::uint64_t>(module));
    auto result = backend.Generate(req);
    if (static_cast<int>(result.texts.size()) != n) {
      throw Error(ErrorCode::kBackend, "backend returned " + std::to_string(result.texts.size()) +
                                           " texts, expected " + std::to_string(n));
    }
    return std::move(result.texts);
  }
};

inline std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Unparseable output maps to do_not_search and bumps the warning counter.
inline SearchDecision ParseSearchDecision(std::string_view output, PipelineCounters* counters) {
  if (output.find(ControlTokenText(ControlToken::kDoNotSearch)) != std::string_view::npos) {
    return SearchDecision::kDoNotSearch;
  }
  if (output.find(ControlTokenText(ControlToken::kDoSearch)) != std::string_view::npos) {
    return SearchDecision::kDoSearch;
  }
  if (counters) ++counters->unparseable_decisions;
  return SearchDecision::kDoNotSearch;
}

inline SearchDecision DecideSearch(const ModuleCall& call, const Example& ex) {
  if (ex.context.empty()) throw Error(ErrorCode::kInvalidArgument, "decide_search: empty context");
  const auto out = call.Run(DecisionPrompt(ex, call.guided), ControlToken::kIsSearchRequired,
                            ModuleId::kDecision);
  return ParseSearchDecision(out.front(), call.counters);
}

inline std::string GenerateQuery(const ModuleCall& call, const Example& ex) {
  auto out = Trim(call.Run(QueryPrompt(ex, call.guided), ControlToken::kGenerateQuery,
                           ModuleId::kQuery).front());
  if (NormalizedText(out).empty()) {
    throw Error(ErrorCode::kGeneration, "generate_query: empty query for " + ex.id);
  }
  return out;
}

inline std::string GenerateSearchKnowledge(const ModuleCall& call, const Example& ex,
                                           const std::vector<const Document*>& docs) {
  if (docs.empty()) {
    throw Error(ErrorCode::kGeneration, "generate_knowledge: no documents for " + ex.id);
  }
  auto out = Trim(call.Run(KnowledgePrompt(ex, docs, call.options.doc_token_budget, call.guided),
                           ControlToken::kGenerateKnowledge, ModuleId::kKnowledge).front());
  if (NormalizedText(out).empty()) {
    throw Error(ErrorCode::kGeneration, "generate_knowledge: empty knowledge for " + ex.id);
  }
  return out;
}

// Empty output is a soft skip.
inline std::optional<std::string> GenerateEntityKnowledge(const ModuleCall& call,
                                                          const Example& ex) {
  if (!call.options.modules.entity) return std::nullopt;
  auto out = Trim(call.Run(EntityPrompt(ex, call.guided), ControlToken::kGenerateEntityKnowledge,
                           ModuleId::kEntity).front());
  if (NormalizedText(out).empty()) return std::nullopt;
  return out;
}

inline std::optional<std::string> GenerateMemoryKnowledge(const ModuleCall& call,
                                                          const Example& ex) {
  if (!call.options.modules.memory || ex.memory.empty()) return std::nullopt;
  auto out = Trim(call.Run(MemoryPrompt(ex, call.guided), ControlToken::kGenerateMemoryKnowledge,
                           ModuleId::kMemory).front());
  if (NormalizedText(out).empty()) return std::nullopt;
  return out;
}

inline std::vector<std::string> GenerateResponse(const ModuleCall& call, const Example& ex,
                                                 const IntermediateSteps& z, int n) {
  if (!z.IsConsistent()) {
    throw Error(ErrorCode::kInvalidArgument, "generate_response: inconsistent intermediate steps");
  }
  auto out = call.Run(ResponsePrompt(ex, z, call.guided), std::nullopt, ModuleId::kResponse, n);
  for (auto& text : out) text = Trim(text);
  return out;
}

inline std::vector<const Document*> LookupDocuments(const Bm25Index& index,
                                                    const std::vector<std::string>& ids) {
  std::vector<const Document*> docs;
  for (const auto& id : ids) docs.push_back(&index.Get(id));
  return docs;
}

// Runs every intermediate module. In module-wise mode gold query/knowledge
// labels, when the example has them, replace the generated ones.
inline IntermediateSteps GenerateIntermediateSteps(const ModuleCall& call, const Bm25Index* index,
                                                   const Example& ex,
                                                   InferenceMode mode = InferenceMode::kEndToEnd) {
  IntermediateSteps z;
  if (call.options.modules.search && index != nullptr) {
    z.search_decision = DecideSearch(call, ex);
  }
  if (z.search_decision == SearchDecision::kDoSearch) {
    z.query = mode == InferenceMode::kModuleWise && ex.query_gold ? *ex.query_gold
                                                                  : GenerateQuery(call, ex);
    std::vector<std::string> ids;
    for (const auto& hit : index->Retrieve(*z.query, call.options.docs_per_query)) {
      ids.push_back(hit.doc_id);
    }
    if (ids.empty()) {
      throw Error(ErrorCode::kGeneration, "retrieval returned no documents for " + ex.id);
    }
    z.doc_ids = ids;
    z.search_knowledge = mode == InferenceMode::kModuleWise && ex.knowledge_gold
                             ? *ex.knowledge_gold
                             : GenerateSearchKnowledge(call, ex, LookupDocuments(*index, ids));
  }
  z.entity_knowledge = GenerateEntityKnowledge(call, ex);
  z.memory_knowledge = GenerateMemoryKnowledge(call, ex);
  return z;
}

struct InferenceTrace {
  std::string example_id;
  std::string task;
  IntermediateSteps steps;
  std::string response;
  std::vector<std::pair<std::string, std::string>> prompt_hashes;  // module -> hash
};

inline Json ToJson(const InferenceTrace& t) {
  Json hashes = Json::object();
  for (const auto& [module, h] : t.prompt_hashes) hashes[module] = h;
  return Json{{"example_id", t.example_id},
              {"task", t.task},
              {"steps", ToJson(t.steps)},
              {"prompt_hashes", hashes},
              {"response", t.response}};
}

// Prompt bytes each module saw, recomputed from the example and its steps.
inline std::vector<std::pair<std::string, std::string>> ModulePrompts(
    const Example& ex, const IntermediateSteps& z, const Bm25Index* index,
    const PipelineOptions& options, const std::optional<std::string>& guided = {}) {
  std::vector<std::pair<std::string, std::string>> prompts;
  if (options.modules.search && index != nullptr) prompts.emplace_back("decision", DecisionPrompt(ex, guided));
  if (z.query) prompts.emplace_back("query", QueryPrompt(ex, guided));
  if (z.doc_ids && index != nullptr) {
    prompts.emplace_back("knowledge", KnowledgePrompt(ex, LookupDocuments(*index, *z.doc_ids),
                                                      options.doc_token_budget, guided));
  }
  if (options.modules.entity) prompts.emplace_back("entity", EntityPrompt(ex, guided));
  if (options.modules.memory && !ex.memory.empty()) {
    prompts.emplace_back("memory", MemoryPrompt(ex, guided));
  }
  prompts.emplace_back("response", ResponsePrompt(ex, z, guided));
  return prompts;
}

inline InferenceTrace RunInference(const Backend& backend, const Bm25Index* index,
                                   const Example& ex, InferenceMode mode,
                                   const PipelineOptions& options, std::uint64_t seed,
                                   PipelineCounters* counters = nullptr) {
  ModuleCall call{backend, options, seed, std::nullopt, counters};
  InferenceTrace trace;
  trace.example_id = ex.id;
  trace.task = ex.task;
  trace.steps = GenerateIntermediateSteps(call, index, ex, mode);
  trace.response = GenerateResponse(call, ex, trace.steps, 1).front();
  for (const auto& [module, prompt] : ModulePrompts(ex, trace.steps, index, options)) {
    trace.prompt_hashes.emplace_back(module, HexHash(Fnv1a64(prompt)));
  }
  return trace;
}

}  // namespace kgboot
