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

// Text layout of module prompts. The pipeline renders prompts with these
// helpers and the toy backend parses them back, so both sides agree on where
// context, documents, knowledge and the guided block live.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgboot/error.hpp"

namespace kgboot {

enum class ControlToken {
  kIsSearchRequired,
  kDoSearch,
  kDoNotSearch,
  kGenerateQuery,
  kGenerateKnowledge,
  kGenerateEntityKnowledge,
  kGenerateMemoryKnowledge,
};

inline constexpr std::array<ControlToken, 7> kAllControlTokens = {
    ControlToken::kIsSearchRequired,      ControlToken::kDoSearch,
    ControlToken::kDoNotSearch,           ControlToken::kGenerateQuery,
    ControlToken::kGenerateKnowledge,     ControlToken::kGenerateEntityKnowledge,
    ControlToken::kGenerateMemoryKnowledge};

inline std::string_view ControlTokenText(ControlToken token) {
  switch (token) {
    case ControlToken::kIsSearchRequired: return "__is-search-required__";
    case ControlToken::kDoSearch: return "__do-search__";
    case ControlToken::kDoNotSearch: return "__do-not-search__";
    case ControlToken::kGenerateQuery: return "__generate-query__";
    case ControlToken::kGenerateKnowledge: return "__generate-knowledge__";
    case ControlToken::kGenerateEntityKnowledge: return "__generate-entity-knowledge__";
    case ControlToken::kGenerateMemoryKnowledge: return "__generate-memory-knowledge__";
  }
  return "";
}

inline std::optional<ControlToken> ParseControlToken(std::string_view text) {
  for (auto token : kAllControlTokens) {
    if (ControlTokenText(token) == text) return token;
  }
  return std::nullopt;
}

// Line prefixes.
namespace prefix {
inline constexpr std::string_view kUser = "user: ";
inline constexpr std::string_view kBot = "bot: ";
inline constexpr std::string_view kMemory = "memory: ";
inline constexpr std::string_view kDocument = "document: ";
inline constexpr std::string_view kKnowledge = "knowledge: ";
inline constexpr std::string_view kEntity = "entity: ";
inline constexpr std::string_view kMemoryKnowledge = "memory knowledge: ";
inline constexpr std::string_view kAnswerChoices = "Answer Choices:";
inline constexpr std::string_view kBullet = "- ";
}  // namespace prefix

enum class Section {
  kContext,
  kMemory,
  kDocument,
  kKnowledge,
  kEntity,
  kMemoryKnowledge,
  kGuided,
  kOther,
};

inline std::string_view SectionName(Section s) {
  switch (s) {
    case Section::kContext: return "context";
    case Section::kMemory: return "memory";
    case Section::kDocument: return "document";
    case Section::kKnowledge: return "knowledge";
    case Section::kEntity: return "entity";
    case Section::kMemoryKnowledge: return "memory_knowledge";
    case Section::kGuided: return "guided";
    case Section::kOther: return "other";
  }
  return "other";
}

inline std::optional<Section> ParseSectionName(std::string_view name) {
  for (auto s : {Section::kContext, Section::kMemory, Section::kDocument, Section::kKnowledge,
                 Section::kEntity, Section::kMemoryKnowledge, Section::kGuided, Section::kOther}) {
    if (SectionName(s) == name) return s;
  }
  return std::nullopt;
}

// "A", "B", ..., "Z", "AA", "AB", ...
inline std::string AlphabeticalLabel(std::size_t index) {
  std::string label;
  std::size_t i = index + 1;
  while (i > 0) {
    --i;
    label.insert(label.begin(), static_cast<char>('A' + i % 26));
    i /= 26;
  }
  return label;
}

// Length of an alphabetical list label such as "B. " at the start of `line`,
// or 0 when there is none.
inline std::size_t AlphabeticalLabelLength(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && line[i] >= 'A' && line[i] <= 'Z') ++i;
  if (i == 0 || i > 3 || i + 1 >= line.size() || line[i] != '.' || line[i + 1] != ' ') return 0;
  return i + 2;
}

struct PromptLine {
  Section section = Section::kOther;
  std::string text;  // without its prefix or list label
  bool is_user = false;
};

struct ParsedPrompt {
  std::vector<PromptLine> lines;
  std::optional<ControlToken> control;
  std::string last_user_turn;
  bool has_guided = false;
};

inline bool StartsWith(std::string_view s, std::string_view p) {
  return s.substr(0, p.size()) == p;
}

inline std::vector<std::string_view> SplitLines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline ParsedPrompt ParsePrompt(std::string_view prompt) {
  ParsedPrompt out;
  for (std::string_view line : SplitLines(prompt)) {
    if (line.empty()) continue;
    if (auto token = ParseControlToken(line)) {
      out.control = token;
      continue;
    }
    if (line == prefix::kAnswerChoices) {
      out.has_guided = true;
      continue;
    }
    PromptLine pl;
    const auto take = [&](std::string_view p, Section s) {
      if (!StartsWith(line, p)) return false;
      pl.section = s;
      pl.text = std::string(line.substr(p.size()));
      return true;
    };
    if (take(prefix::kUser, Section::kContext)) {
      pl.is_user = true;
      out.last_user_turn = pl.text;
    } else if (take(prefix::kBot, Section::kContext) ||
               take(prefix::kMemoryKnowledge, Section::kMemoryKnowledge) ||
               take(prefix::kMemory, Section::kMemory) ||
               take(prefix::kDocument, Section::kDocument) ||
               take(prefix::kKnowledge, Section::kKnowledge) ||
               take(prefix::kEntity, Section::kEntity) ||
               take(prefix::kBullet, Section::kGuided)) {
    } else if (auto label = AlphabeticalLabelLength(line)) {
      pl.section = Section::kGuided;
      pl.text = std::string(line.substr(label));
    } else {
      pl.section = Section::kOther;
      pl.text = std::string(line);
    }
    if (pl.section == Section::kGuided) out.has_guided = true;
    if (!pl.text.empty()) out.lines.push_back(std::move(pl));
  }
  return out;
}

}  // namespace kgboot
