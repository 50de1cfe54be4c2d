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

// A deterministic, learnable stand-in for a neural generator.
//
// State is a memory table keyed by (control token, bag of tokens of the last
// user turn). Each key holds weighted candidates of two kinds:
//   "lit:<text>"            emit this exact text;
//   "ptr:<section>:<rank>"  copy the line of that prompt section that ranks
//                           <rank> by token overlap with the last user turn.
// Finetuning adds lr * lr_scale to the literal target and to every pointer
// that reproduces the target from the training input. Pointer candidates are
// what lets learning transfer to prompts never seen in training.
//
// Sampling mixes two branches:
//   copy_bias      copy a uniformly chosen content line of the prompt,
//                  guided-list lines included;
//   1 - copy_bias  the model's own policy: a softmax (temperature T) over
//                  candidate scores aggregated from the exact key and the
//                  nearest keys by Jaccard similarity, plus a residual copy
//                  candidate with score 0 over the non-guided lines. Outputs
//                  equal to an item of a guided list are scaled by
//                  guided_avoid: listed items read as options already tried.
//                  The residual copy favours lines that share tokens with
//                  the other listed items: weight exp(hint_focus * sum of
//                  Jaccard similarities).
// With no memory neighbours the own policy is the residual copy alone.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/prompt.hpp"
#include "kgboot/rng.hpp"
#include "kgboot/text_metrics.hpp"

namespace kgboot {

struct ToyOptions {
  double copy_bias = 0.1;
  // Weight increment per trained pair is lr * lr_scale (1.0 at lr = 2e-6).
  double lr_scale = 5e5;
  std::size_t neighbors = 5;
  double guided_avoid = 0.1;
  double hint_focus = 4.0;
};

// Temperatures at or below this are the argmax limit.
inline constexpr double kGreedyTemperature = 1e-6;

class ToyBackend final : public Backend {
 public:
  using Distribution = std::map<std::string, double>;

  explicit ToyBackend(std::uint64_t seed = 0, ToyOptions options = {})
      : seed_(seed), options_(options) {
    if (options_.copy_bias < 0 || options_.copy_bias > 1) {
      throw Error(ErrorCode::kInvalidArgument, "toy backend: copy_bias must be in [0, 1]");
    }
  }

  ToyBackend(const ToyBackend& other) {
    std::shared_lock lock(other.mu_);
    seed_ = other.seed_;
    options_ = other.options_;
    version_ = other.version_;
    memory_ = other.memory_;
  }

  GenerationResult Generate(const GenerationRequest& request) const override {
    request.Validate();
    std::shared_lock lock(mu_);
    const Distribution dist = DistributionLocked(request.prompt, request.temperature, request.top_p);
    GenerationResult result;
    Rng rng(MixSeed(seed_, request.seed, version_, Fnv1a64(request.prompt)));
    std::vector<std::string> texts;
    std::vector<double> weights;
    for (const auto& [text, p] : dist) {
      texts.push_back(text);
      weights.push_back(p);
    }
    for (int i = 0; i < request.n; ++i) {
      std::string out = texts.empty() ? std::string() : texts[rng.Weighted(weights)];
      result.texts.push_back(Truncate(out, request.max_tokens));
    }
    return result;
  }

  std::string Finetune(std::span<const TrainingPair> pairs, double lr) override {
    if (pairs.empty()) throw Error(ErrorCode::kInvalidArgument, "finetune: no training pairs");
    if (!(lr > 0)) throw Error(ErrorCode::kInvalidArgument, "finetune: lr must be > 0");
    for (const auto& pair : pairs) {
      if (NormalizedText(pair.target).empty()) {
        throw Error(ErrorCode::kInvalidArgument, "finetune: empty target");
      }
    }
    const double delta = lr * options_.lr_scale;
    std::unique_lock lock(mu_);
    for (const auto& pair : pairs) {
      const ParsedPrompt parsed = ParsePrompt(pair.input);
      const auto signature = Signature(parsed);
      auto& entry = memory_[Key(parsed.control, signature)];
      entry.control = ControlName(parsed.control);
      entry.signature = signature;
      entry.candidates["lit:" + pair.target] += delta;
      const std::string target_norm = NormalizedText(pair.target);
      for (const auto& [section, ranked] : RankedSections(parsed, signature)) {
        for (std::size_t r = 0; r < ranked.size(); ++r) {
          if (NormalizedText(ranked[r]) == target_norm) {
            entry.candidates["ptr:" + std::string(SectionName(section)) + ":" +
                             std::to_string(r)] += delta;
          }
        }
      }
    }
    ++version_;
    return std::to_string(version_);
  }

  std::string Version() const override {
    std::shared_lock lock(mu_);
    return std::to_string(version_);
  }

  std::unique_ptr<Backend> Clone() const override { return std::make_unique<ToyBackend>(*this); }

  // The exact output distribution Generate() samples from (before
  // max_tokens truncation).
  Distribution OutputDistribution(std::string_view prompt, double temperature = 1.0,
                                  double top_p = 1.0) const {
    std::shared_lock lock(mu_);
    return DistributionLocked(prompt, temperature, top_p);
  }

  double Probability(std::string_view prompt, const std::string& text, double temperature = 1.0,
                     double top_p = 1.0) const {
    const auto dist = OutputDistribution(prompt, temperature, top_p);
    auto it = dist.find(text);
    return it == dist.end() ? 0.0 : it->second;
  }

  // Aggregated own-policy candidate scores for a prompt, exposed for tests.
  std::map<std::string, double> CandidateScores(std::string_view prompt) const {
    std::shared_lock lock(mu_);
    const ParsedPrompt parsed = ParsePrompt(prompt);
    return ScoresLocked(parsed, Signature(parsed));
  }

  std::uint64_t version_number() const {
    std::shared_lock lock(mu_);
    return version_;
  }
  const ToyOptions& options() const { return options_; }
  std::uint64_t seed() const { return seed_; }

  Json Save() const {
    std::shared_lock lock(mu_);
    Json entries = Json::array();
    for (const auto& [key, entry] : memory_) {
      Json cands = Json::object();
      for (const auto& [id, w] : entry.candidates) cands[id] = w;
      entries.push_back(Json{{"key", key},
                             {"control", entry.control},
                             {"signature", std::vector<std::string>(entry.signature.begin(),
                                                                    entry.signature.end())},
                             {"candidates", cands}});
    }
    return Json{{"format", "kgboot-toy-model"},
                {"seed", seed_},
                {"version", version_},
                {"copy_bias", options_.copy_bias},
                {"lr_scale", options_.lr_scale},
                {"neighbors", options_.neighbors},
                {"guided_avoid", options_.guided_avoid},
                {"hint_focus", options_.hint_focus},
                {"entries", entries}};
  }

  static ToyBackend Load(const Json& j) {
    if (j.value("format", "") != "kgboot-toy-model") {
      throw Error(ErrorCode::kIo, "not a toy model state");
    }
    ToyOptions opts;
    opts.copy_bias = j.at("copy_bias").get<double>();
    opts.lr_scale = j.at("lr_scale").get<double>();
    opts.neighbors = j.at("neighbors").get<std::size_t>();
    opts.guided_avoid = j.at("guided_avoid").get<double>();
    opts.hint_focus = j.value("hint_focus", 0.0);
    ToyBackend toy(j.at("seed").get<std::uint64_t>(), opts);
    toy.version_ = j.at("version").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      Entry entry;
      entry.control = e.at("control").get<std::string>();
      for (const auto& t : e.at("signature")) entry.signature.insert(t.get<std::string>());
      for (const auto& [id, w] : e.at("candidates").items()) entry.candidates[id] = w.get<double>();
      toy.memory_.emplace(e.at("key").get<std::string>(), std::move(entry));
    }
    return toy;
  }

 private:
  struct Entry {
    std::string control;
    std::set<std::string> signature;
    std::map<std::string, double> candidates;
  };

  static std::string ControlName(const std::optional<ControlToken>& control) {
    return control ? std::string(ControlTokenText(*control)) : std::string("response");
  }

  static std::set<std::string> TokenSet(std::string_view text) {
    const auto toks = Normalize(text).tokens;
    return {toks.begin(), toks.end()};
  }

  static std::set<std::string> Signature(const ParsedPrompt& parsed) {
    if (!parsed.last_user_turn.empty()) return TokenSet(parsed.last_user_turn);
    std::set<std::string> all;
    for (const auto& line : parsed.lines) {
      if (line.section == Section::kGuided) continue;
      auto s = TokenSet(line.text);
      all.insert(s.begin(), s.end());
    }
    return all;
  }

  static std::string Key(const std::optional<ControlToken>& control,
                         const std::set<std::string>& signature) {
    std::string key = ControlName(control) + "|";
    for (const auto& t : signature) key += t + " ";
    return key;
  }

  static std::size_t Overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::size_t n = 0;
    for (const auto& t : a) n += b.count(t);
    return n;
  }

  static double Jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    const std::size_t inter = Overlap(a, b);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
  }

  // Lines of each non-guided section ordered by overlap with the signature
  // (descending), stable in prompt order.
  static std::map<Section, std::vector<std::string>> RankedSections(
      const ParsedPrompt& parsed, const std::set<std::string>& signature) {
    std::map<Section, std::vector<std::pair<std::size_t, std::string>>> scored;
    for (const auto& line : parsed.lines) {
      if (line.section == Section::kGuided) continue;
      scored[line.section].emplace_back(Overlap(TokenSet(line.text), signature), line.text);
    }
    std::map<Section, std::vector<std::string>> out;
    for (auto& [section, lines] : scored) {
      std::stable_sort(lines.begin(), lines.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (auto& [_, text] : lines) out[section].push_back(std::move(text));
    }
    return out;
  }

  std::map<std::string, double> ScoresLocked(const ParsedPrompt& parsed,
                                             const std::set<std::string>& signature) const {
    const std::string control = ControlName(parsed.control);
    const std::string exact_key = Key(parsed.control, signature);

    // Exact key always participates; up to `neighbors` other keys join by
    // similarity (ties by key order).
    std::vector<std::pair<double, const std::string*>> near;
    for (const auto& [key, entry] : memory_) {
      if (entry.control != control || key == exact_key) continue;
      const double sim = Jaccard(signature, entry.signature);
      if (sim > 0) near.emplace_back(sim, &key);
    }
    std::stable_sort(near.begin(), near.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    if (near.size() > options_.neighbors) near.resize(options_.neighbors);
    if (auto it = memory_.find(exact_key); it != memory_.end()) {
      near.insert(near.begin(), {1.0, &it->first});
    }

    std::map<std::string, double> scores;
    if (near.empty()) return scores;
    const auto ranked = RankedSections(parsed, signature);
    for (const auto& [sim, key] : near) {
      for (const auto& [id, weight] : memory_.at(*key).candidates) {
        std::string text;
        if (id.rfind("lit:", 0) == 0) {
          text = id.substr(4);
        } else {
          const auto colon = id.rfind(':');
          const auto section = ParseSectionName(id.substr(4, colon - 4));
          const auto rank = std::stoul(id.substr(colon + 1));
          if (!section) continue;
          auto it = ranked.find(*section);
          if (it == ranked.end() || rank >= it->second.size()) continue;
          text = it->second[rank];
        }
        scores[text] += sim * weight;
      }
    }
    return scores;
  }

  Distribution DistributionLocked(std::string_view prompt, double temperature,
                                  double top_p) const {
    const ParsedPrompt parsed = ParsePrompt(prompt);
    const auto signature = Signature(parsed);

    std::set<std::string> listed;
    std::vector<std::set<std::string>> hints;
    for (const auto& line : parsed.lines) {
      if (line.section != Section::kGuided) continue;
      listed.insert(NormalizedText(line.text));
      hints.push_back(TokenSet(line.text));
    }
    const auto focus = [&](const std::string& text) {
      if (hints.empty() || options_.hint_focus == 0) return 1.0;
      const auto tokens = TokenSet(text);
      double evidence = 0;
      for (const auto& h : hints) {
        if (h != tokens) evidence += Jaccard(tokens, h);
      }
      return std::exp(options_.hint_focus * evidence);
    };
    const auto avoid = [&](const std::string& text) {
      return listed.count(NormalizedText(text)) ? options_.guided_avoid : 1.0;
    };

    // Prompt copy: every content line, guided items included.
    Distribution prompt_copy;
    for (const auto& line : parsed.lines) prompt_copy[line.text] += 1.0;
    NormalizeDist(prompt_copy);

    // Residual copy of the own policy: non-guided lines, listed items avoided.
    Distribution own_copy;
    for (const auto& line : parsed.lines) {
      if (line.section != Section::kGuided) own_copy[line.text] += avoid(line.text) * focus(line.text);
    }
    if (own_copy.empty()) own_copy = prompt_copy;
    NormalizeDist(own_copy);

    Distribution own;
    const auto scores = ScoresLocked(parsed, signature);
    if (scores.empty()) {
      own = own_copy;
    } else if (temperature <= kGreedyTemperature) {
      // Argmax over candidates and the residual copy (score 0); the first
      // maximal text in lexicographic order wins.
      double best = 0.0;
      std::string best_text;
      bool found = false;
      for (const auto& [text, s] : scores) {
        const double v = s + std::log(avoid(text));
        if (!found || v > best) {
          best = v;
          best_text = text;
          found = true;
        }
      }
      if (best > 0) {
        own[best_text] = 1.0;
      } else {
        own = own_copy;
      }
    } else {
      double max_score = 0.0;
      for (const auto& [_, s] : scores) max_score = std::max(max_score, s);
      double residual = std::exp((0.0 - max_score) / temperature);
      for (const auto& [text, s] : scores) {
        own[text] += std::exp((s - max_score) / temperature) * avoid(text);
      }
      for (const auto& [text, p] : own_copy) own[text] += residual * p;
      NormalizeDist(own);
    }

    Distribution mixed;
    const double c = options_.copy_bias;
    if (c > 0) {
      for (const auto& [text, p] : prompt_copy) mixed[text] += c * p;
    }
    if (c < 1) {
      for (const auto& [text, p] : own) mixed[text] += (1.0 - c) * p;
    }
    if (temperature <= kGreedyTemperature && !mixed.empty()) {
      auto best = mixed.begin();
      for (auto it = mixed.begin(); it != mixed.end(); ++it) {
        if (it->second > best->second) best = it;
      }
      return Distribution{{best->first, 1.0}};
    }
    return Nucleus(std::move(mixed), top_p);
  }

  static void NormalizeDist(Distribution& dist) {
    double total = 0;
    for (const auto& [_, p] : dist) total += p;
    if (total <= 0) return;
    for (auto& [_, p] : dist) p /= total;
  }

  // Items tied with the last kept probability are kept too, so the cut
  // never depends on text order.
  static Distribution Nucleus(Distribution dist, double top_p) {
    if (top_p >= 1.0 || dist.empty()) return dist;
    std::vector<std::pair<std::string, double>> items(dist.begin(), dist.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Distribution kept;
    double cum = 0;
    double boundary = -1;
    for (const auto& [text, p] : items) {
      if (boundary >= 0 && p < boundary * (1 - 1e-12)) break;
      kept[text] = p;
      cum += p;
      if (boundary < 0 && cum >= top_p - 1e-12) boundary = p;
    }
    NormalizeDist(kept);
    return kept;
  }

  static std::string Truncate(const std::string& text, int max_tokens) {
    std::size_t count = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const bool space = text[i] == ' ' || text[i] == '\t' || text[i] == '\n';
      if (!space && !in_token) {
        if (count == static_cast<std::size_t>(max_tokens)) {
          auto end = text.find_last_not_of(" \t\n", i - 1);
          return text.substr(0, end + 1);
        }
        ++count;
      }
      in_token = !space;
    }
    return text;
  }

  mutable std::shared_mutex mu_;
  std::uint64_t seed_ = 0;
  ToyOptions options_;
  std::uint64_t version_ = 0;
  std::map<std::string, Entry> memory_;
};

inline std::unique_ptr<ToyBackend> MakeToyBackend(std::uint64_t seed, double copy_bias) {
  ToyOptions options;
  options.copy_bias = copy_bias;
  return std::make_unique<ToyBackend>(seed, options);
}

}  // namespace kgboot
