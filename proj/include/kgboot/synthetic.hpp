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

// Deterministic synthetic QA task: a corpus of invented entities, each with
// a handful of relation facts, and questions asking for one fact.

#include <array>
#include <cstdio>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/error.hpp"
#include "kgboot/pipeline.hpp"
#include "kgboot/retrieval.hpp"
#include "kgboot/rng.hpp"

namespace kgboot {

struct SyntheticSpec {
  std::uint64_t seed = 2024;
  int documents = 100;
  int train = 200;
  int validation = 50;
  int test = 50;
  int seed_pairs = 50;
  std::string task = "qa";
};

struct SyntheticTask {
  std::vector<Document> corpus;
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  // Warm start for the search decision, which copying cannot produce.
  std::vector<TrainingPair> seed_pairs;
};

namespace detail {

struct Relation {
  const char* name;
  const char* verb;
  const char* wh;
};

inline constexpr std::array<Relation, 5> kRelations = {{
    {"founder", "was", "who"},
    {"ruler", "is", "who"},
    {"river", "is", "what"},
    {"dish", "is", "what"},
    {"festival", "is", "what"},
}};

// Pronounceable invented word, unique within `used`.
inline std::string InventWord(Rng& rng, std::set<std::string>& used, int syllables) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  static constexpr std::string_view kCodas = "nrslx";
  for (;;) {
    std::string word;
    for (int s = 0; s < syllables; ++s) {
      word.push_back(kOnsets[rng.Index(kOnsets.size())]);
      word.push_back(kVowels[rng.Index(kVowels.size())]);
    }
    word.push_back(kCodas[rng.Index(kCodas.size())]);
    if (used.insert(word).second) return word;
  }
}

}  // namespace detail

inline SyntheticTask GenerateSyntheticTask(const SyntheticSpec& spec) {
  const int facts_needed = spec.train + spec.validation + spec.test;
  if (spec.documents < 1 || spec.train < 1 || spec.test < 1 || spec.validation < 0 ||
      spec.seed_pairs < 0) {
    throw Error(ErrorCode::kInvalidArgument, "synth: counts must be positive");
  }
  if (facts_needed > spec.documents * static_cast<int>(detail::kRelations.size())) {
    throw Error(ErrorCode::kInvalidArgument, "synth: not enough facts for the requested splits");
  }
  Rng rng(SubstreamSeed(spec.seed, "synthetic"));
  std::set<std::string> used = {"it", "is", "was", "the", "of", "who", "what"};
  for (const auto& r : detail::kRelations) used.insert(r.name);

  struct Fact {
    std::string entity;
    const detail::Relation* relation;
    std::string answer;
    std::string doc_id;
  };
  SyntheticTask task;
  std::vector<Fact> facts;
  for (int d = 0; d < spec.documents; ++d) {
    const std::string entity = detail::InventWord(rng, used, 3);
    char id[32];
    std::snprintf(id, sizeof id, "doc%03d", d);
    std::string body;
    for (const auto& rel : detail::kRelations) {
      const std::string answer =
          detail::InventWord(rng, used, 2) + " " + detail::InventWord(rng, used, 2);
      body += std::string("The ") + rel.name + " of " + entity + " " + rel.verb + " " + answer + ". ";
      facts.push_back({entity, &rel, answer, id});
    }
    body.pop_back();
    task.corpus.push_back({id, entity, body});
  }

  rng.Shuffle(facts);
  const auto make = [&](const Fact& f, const std::string& id) {
    Example ex;
    ex.id = id;
    ex.task = spec.task;
    ex.context = {{Speaker::kUser, std::string(f.relation->wh) + " " + f.relation->verb + " the " +
                                       f.relation->name + " of " + f.entity}};
    ex.target = std::string("it ") + f.relation->verb + " " + f.answer;
    ex.query_gold = f.entity + " " + f.relation->name;
    ex.knowledge_gold = std::string("the ") + f.relation->name + " of " + f.entity + " " +
                        f.relation->verb + " " + f.answer;
    return ex;
  };
  int next = 0;
  const auto take = [&](int n, const char* prefix, std::vector<Example>& out) {
    for (int i = 0; i < n; ++i, ++next) {
      char id[32];
      std::snprintf(id, sizeof id, "%s%03d", prefix, i);
      out.push_back(make(facts[next], id));
    }
  };
  take(spec.train, "train", task.train);
  take(spec.validation, "valid", task.validation);
  take(spec.test, "test", task.test);

  for (int i = 0; i < spec.seed_pairs && i < spec.train; ++i) {
    task.seed_pairs.push_back(
        {DecisionPrompt(task.train[i]), std::string(ControlTokenText(ControlToken::kDoSearch))});
  }
  return task;
}

}  // namespace kgboot
