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

// Overlap and diversity metrics. Every metric is a pure function of token
// sequences; the templates accept any token type that is equality- and
// less-than-comparable, so tests can drive them with small integer alphabets.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgboot/error.hpp"

namespace kgboot {

// A normalized token sequence. Only Normalize() produces these from text so
// that the matching gate, the evaluation, and the analyses tokenize alike.
struct TokenSeq {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::span<const std::string> view() const { return tokens; }
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

// Lowercase, drop ASCII punctuation, split on whitespace.
inline TokenSeq Normalize(std::string_view text) {
  TokenSeq out;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      if (!current.empty()) out.tokens.push_back(std::move(current));
      current.clear();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.tokens.push_back(std::move(current));
  return out;
}

// Normalized tokens joined by single spaces.
inline std::string NormalizedText(std::string_view text) {
  std::string out;
  for (const auto& tok : Normalize(text).tokens) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

template <typename T>
std::size_t LcsLength(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return 0;
  // One DP row over b; `diag` carries the previous row's left neighbour.
  constexpr std::size_t kInline = 64;
  std::array<std::size_t, kInline + 1> small;
  std::vector<std::size_t> large;
  std::size_t* row = small.data();
  if (b.size() > kInline) {
    large.resize(b.size() + 1);
    row = large.data();
  }
  std::fill(row, row + b.size() + 1, std::size_t{0});
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      // On a match diag + 1 already dominates both neighbours.
      row[j] = std::max(std::max(up, row[j - 1]), diag + static_cast<std::size_t>(a[i] == b[j - 1]));
      diag = up;
    }
  }
  return row[b.size()];
}

// ROUGE-L F-measure with beta = 1.
template <typename T>
double RougeL(std::span<const T> candidate, std::span<const T> reference) {
  const std::size_t lcs = LcsLength(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

template <typename T>
std::map<std::vector<T>, std::size_t> CountNgrams(std::span<const T> seq,
                                                  std::size_t n) {
  std::map<std::vector<T>, std::size_t> counts;
  if (n == 0 || seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<T>(seq.begin() + i, seq.begin() + i + n)];
  }
  return counts;
}

// Unigram F1 with multiset (clipped) overlap.
template <typename T>
double TokenF1(std::span<const T> candidate, std::span<const T> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto cand = CountNgrams(candidate, 1);
  const auto ref = CountNgrams(reference, 1);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(count, it->second);
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

// Floor substituted for a zero modified precision.
inline constexpr double kBleuEpsilon = 1e-9;

// Sentence BLEU up to order max_n against several references: clipped
// precisions, uniform weights, closest-reference brevity penalty (ties take
// the shorter reference).
template <typename T>
double BleuN(std::span<const T> candidate,
             const std::vector<std::span<const T>>& references,
             std::size_t max_n) {
  if (max_n == 0) {
    throw Error(ErrorCode::kInvalidArgument, "bleu: n-gram order must be >= 1");
  }
  if (candidate.empty() || references.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = CountNgrams(candidate, n);
    std::map<std::vector<T>, std::size_t> max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, count] : CountNgrams(ref, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, count);
      }
    }
    std::size_t total = 0;
    std::size_t matched = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      if (auto it = max_ref.find(gram); it != max_ref.end()) {
        matched += std::min(count, it->second);
      }
    }
    const double precision = matched == 0 ? kBleuEpsilon
                                          : static_cast<double>(matched) /
                                                static_cast<double>(total);
    log_sum += std::log(precision);
  }

  const std::size_t c = candidate.size();
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r)) {
      r = ref.size();
    }
  }
  const double bp = c > r ? 1.0
                          : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

// Mean BLEU of each response against all the others. Lower is more diverse.
template <typename T>
double SelfBleu(const std::vector<std::span<const T>>& responses,
                std::size_t max_n = 4) {
  if (responses.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "self_bleu: needs at least 2 responses");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    std::vector<std::span<const T>> others;
    others.reserve(responses.size() - 1);
    for (std::size_t j = 0; j < responses.size(); ++j) {
      if (j != i) others.push_back(responses[j]);
    }
    sum += BleuN(responses[i], others, max_n);
  }
  return sum / static_cast<double>(responses.size());
}

// Distinct n-grams over total n-grams, pooled across responses.
template <typename T>
double DistinctN(const std::vector<std::span<const T>>& responses,
                 std::size_t n = 2) {
  if (n == 0) {
    throw Error(ErrorCode::kInvalidArgument, "distinct: n-gram order must be >= 1");
  }
  std::set<std::vector<T>> seen;
  std::size_t total = 0;
  for (const auto& response : responses) {
    for (const auto& [gram, count] : CountNgrams(response, n)) {
      seen.insert(gram);
      total += count;
    }
  }
  if (total == 0) {
    throw Error(ErrorCode::kEmpty, "distinct: no n-gram of the requested order");
  }
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

// TokenSeq conveniences.

inline double RougeL(const TokenSeq& candidate, const TokenSeq& reference) {
  return RougeL(candidate.view(), reference.view());
}

inline double TokenF1(const TokenSeq& candidate, const TokenSeq& reference) {
  return TokenF1(candidate.view(), reference.view());
}

inline std::vector<std::span<const std::string>> Views(const std::vector<TokenSeq>& seqs) {
  std::vector<std::span<const std::string>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(s.view());
  return out;
}

inline double BleuN(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
                    std::size_t max_n) {
  return BleuN(candidate.view(), Views(references), max_n);
}

inline double SelfBleu(const std::vector<TokenSeq>& responses, std::size_t max_n = 4) {
  return SelfBleu(Views(responses), max_n);
}

inline double DistinctN(const std::vector<TokenSeq>& responses, std::size_t n = 2) {
  return DistinctN(Views(responses), n);
}

// Identifiers accepted by Similarity(). "sbert" has no implementation; it is
// rejected like any other unknown id.
enum class MetricKind { kRougeL, kTokenF1, kBleu4 };

inline MetricKind ParseMetricKind(std::string_view id) {
  if (id == "rouge_l") return MetricKind::kRougeL;
  if (id == "token_f1" || id == "f1") return MetricKind::kTokenF1;
  if (id == "bleu4" || id == "bleu") return MetricKind::kBleu4;
  throw Error(ErrorCode::kInvalidArgument, "unknown similarity metric '" + std::string(id) + "'");
}

inline std::string_view MetricKindName(MetricKind kind) {
  switch (kind) {
    case MetricKind::kRougeL: return "rouge_l";
    case MetricKind::kTokenF1: return "token_f1";
    case MetricKind::kBleu4: return "bleu4";
  }
  return "rouge_l";
}

inline double Similarity(std::string_view candidate, std::string_view reference,
                         MetricKind kind = MetricKind::kRougeL) {
  const TokenSeq c = Normalize(candidate);
  const TokenSeq r = Normalize(reference);
  switch (kind) {
    case MetricKind::kRougeL: return RougeL(c, r);
    case MetricKind::kTokenF1: return TokenF1(c, r);
    case MetricKind::kBleu4: return BleuN(c, std::vector<TokenSeq>{r}, 4);
  }
  return 0.0;
}

inline double Similarity(std::string_view candidate, std::string_view reference,
                         std::string_view kind) {
  return Similarity(candidate, reference, ParseMetricKind(kind));
}

// Reported aggregate scores; optional fields are absent when not computed.
struct MetricReport {
  double f1 = 0.0;
  double rouge_l = 0.0;
  std::optional<double> self_bleu;
  std::optional<double> distinct;
  std::optional<double> matching_rate;
};

}  // namespace kgboot
