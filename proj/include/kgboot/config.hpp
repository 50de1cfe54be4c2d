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

// Run configuration: a flat INI file with one section per concern and one
// [task.<id>] section per task. Unknown keys are errors.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kgboot/bootstrap.hpp"
#include "kgboot/error.hpp"
#include "kgboot/threshold_search.hpp"
#include "kgboot/toy_backend.hpp"

namespace kgboot {

inline constexpr const char* kBackendUrlEnv = "KGBOOT_BACKEND_URL";

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path corpus, train, validation, test, seed_pairs, output_dir, index;
  std::filesystem::path thresholds_file;
  std::string backend = "toy";  // toy | http
  std::string backend_url;
  std::string mode;             // named bootstrap preset, applied before explicit keys

  BootstrapConfig bootstrap;
  ToyOptions toy;
  HttpOptions http;

  int eval_samples = 10;
  std::set<std::string> overlap_exclude;

  ThresholdGrid grid;
  ThresholdPick pick = ThresholdPick::kLastImproving;
  std::size_t validation_size = 50;
  std::int64_t trial_samples = 0;

  std::uint64_t Substream(std::string_view name) const { return SubstreamSeed(seed, name); }
};

namespace detail {

using Tree = boost::property_tree::ptree;

inline bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::kConfig, key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) {
    throw Error(ErrorCode::kConfig, key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline std::vector<std::string> SplitList(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    const auto s = Trim(item);
    if (!s.empty()) out.push_back(s);
  }
  return out;
}

template <typename E>
E ParseChoice(const std::string& key, const std::string& v,
              std::initializer_list<std::pair<const char*, E>> choices) {
  for (const auto& [name, value] : choices) {
    if (v == name) return value;
  }
  std::string allowed;
  for (const auto& [name, _] : choices) allowed += std::string(allowed.empty() ? "" : "|") + name;
  throw Error(ErrorCode::kConfig, key + ": expected one of " + allowed + ", got '" + v + "'");
}

}  // namespace detail

// Applies one "section.key = value" setting.
inline void SetConfigValue(RunConfig& c, const std::filesystem::path& base,
                           const std::string& section, const std::string& key,
                           const std::string& raw) {
  using namespace detail;
  const std::string v = Trim(raw);
  const std::string name = section + "." + key;
  const auto path = [&] {
    std::filesystem::path p(v);
    return p.is_absolute() || v.empty() ? p : base / p;
  };
  const auto num = [&]<typename T>(T& out) { out = ParseNumber<T>(name, v); };
  BootstrapConfig& b = c.bootstrap;

  if (section == "run") {
    if (key == "seed") return num(c.seed);
    if (key == "corpus") return void(c.corpus = path());
    if (key == "train") return void(c.train = path());
    if (key == "validation") return void(c.validation = path());
    if (key == "test") return void(c.test = path());
    if (key == "seed_pairs") return void(c.seed_pairs = path());
    if (key == "output_dir") return void(c.output_dir = path());
    if (key == "index") return void(c.index = path());
    if (key == "thresholds_file") return void(c.thresholds_file = path());
    if (key == "backend") {
      c.backend = ParseChoice<std::string>(name, v, {{"toy", "toy"}, {"http", "http"}});
      return;
    }
    if (key == "backend_url") return void(c.backend_url = v);
  } else if (section == "bootstrap") {
    if (key == "mode") {
      c.mode = v;
      ApplyBootstrapMode(b, v);
      return;
    }
    if (key == "k") return num(b.k);
    if (key == "h") return num(b.h);
    if (key == "n0") return num(b.n0);
    if (key == "growth") return num(b.growth);
    if (key == "learning_rate") return num(b.learning_rate);
    if (key == "retry") return void(b.retry = ParseBool(name, v));
    if (key == "include_ground_truth") return void(b.include_ground_truth = ParseBool(name, v));
    if (key == "retry_samples") return num(b.retry_samples);
    if (key == "attempt_budget_factor") return num(b.attempt_budget_factor);
    if (key == "batch_size") return num(b.batch_size);
    if (key == "similarity") return void(b.similarity = ParseMetricKind(v));
    if (key == "guidance_items") {
      b.guidance_items = ParseChoice<GuidanceItems>(
          name, v, {{"unmatched", GuidanceItems::kUnmatched},
                    {"random_ground_truths", GuidanceItems::kRandomGroundTruths}});
      return;
    }
    if (key == "format") {
      b.format = ParseChoice<GuidedFormat>(name, v,
                                           {{"alphabetical", GuidedFormat::kAlphabetical},
                                            {"bulleted", GuidedFormat::kBulleted},
                                            {"answer_choices", GuidedFormat::kAnswerChoices}});
      return;
    }
    if (key == "selection") {
      b.selection = ParseChoice<CandidateSelection>(
          name, v, {{"most_similar", CandidateSelection::kMostSimilar},
                    {"least_similar", CandidateSelection::kLeastSimilar}});
      return;
    }
    if (key == "retry_steps") {
      b.retry_steps = ParseChoice<RetrySteps>(
          name, v, {{"regenerate", RetrySteps::kRegenerate}, {"reuse", RetrySteps::kReuse}});
      return;
    }
  } else if (section == "pipeline") {
    PipelineOptions& p = b.pipeline;
    if (key == "docs_per_query") return num(p.docs_per_query);
    if (key == "doc_token_budget") return num(p.doc_token_budget);
    if (key == "temperature") return num(p.temperature);
    if (key == "top_p") return num(p.top_p);
    if (key == "max_tokens") return num(p.max_tokens);
  } else if (section == "toy") {
    if (key == "copy_bias") return num(c.toy.copy_bias);
    if (key == "lr_scale") return num(c.toy.lr_scale);
    if (key == "neighbors") return num(c.toy.neighbors);
    if (key == "guided_avoid") return num(c.toy.guided_avoid);
    if (key == "hint_focus") return num(c.toy.hint_focus);
  } else if (section == "http") {
    if (key == "timeout_ms") return num(c.http.timeout_ms);
    if (key == "retries") return num(c.http.retries);
    if (key == "max_in_flight") return num(c.http.max_in_flight);
  } else if (section == "eval") {
    if (key == "samples_per_example") return num(c.eval_samples);
    if (key == "overlap_exclude") {
      const auto items = SplitList(v);
      c.overlap_exclude = {items.begin(), items.end()};
      return;
    }
  } else if (section == "threshold_search") {
    if (key == "start") return num(c.grid.start);
    if (key == "step") return num(c.grid.step);
    if (key == "max_steps") return num(c.grid.max_steps);
    if (key == "validation_size") return num(c.validation_size);
    if (key == "samples") return num(c.trial_samples);
    if (key == "pick") {
      c.pick = ParseChoice<ThresholdPick>(name, v,
                                          {{"last_improving", ThresholdPick::kLastImproving},
                                           {"last_tried", ThresholdPick::kLastTried}});
      return;
    }
  } else if (section.rfind("task.", 0) == 0 && section.size() > 5) {
    TaskSettings& t = b.tasks[section.substr(5)];
    if (key == "threshold") return num(t.threshold);
    if (key == "fixed_threshold") return void(t.fixed_threshold = ParseBool(name, v));
    if (key == "modules") {
      t.modules = {.search = false, .entity = false, .memory = false};
      for (const auto& m : SplitList(v)) {
        if (m == "search") t.modules.search = true;
        else if (m == "entity") t.modules.entity = true;
        else if (m == "memory") t.modules.memory = true;
        else throw Error(ErrorCode::kConfig, name + ": unknown module '" + m + "'");
      }
      return;
    }
  }
  throw Error(ErrorCode::kConfig, "unknown config key '" + name + "'");
}

inline void ValidateRunConfig(const RunConfig& c) {
  c.bootstrap.Validate();
  if (!(c.bootstrap.pipeline.temperature > 0)) {
    throw Error(ErrorCode::kConfig, "pipeline.temperature must be > 0");
  }
  if (!(c.bootstrap.pipeline.top_p > 0 && c.bootstrap.pipeline.top_p <= 1)) {
    throw Error(ErrorCode::kConfig, "pipeline.top_p must be in (0,1]");
  }
  if (c.bootstrap.pipeline.max_tokens < 1) throw Error(ErrorCode::kConfig, "pipeline.max_tokens must be >= 1");
  if (c.bootstrap.pipeline.docs_per_query < 1) throw Error(ErrorCode::kConfig, "pipeline.docs_per_query must be >= 1");
  if (c.toy.copy_bias < 0 || c.toy.copy_bias > 1) throw Error(ErrorCode::kConfig, "toy.copy_bias must be in [0,1]");
  if (c.eval_samples < 2) throw Error(ErrorCode::kConfig, "eval.samples_per_example must be >= 2");
  if (c.http.timeout_ms < 1 || c.http.retries < 0 || c.http.max_in_flight < 1) {
    throw Error(ErrorCode::kConfig, "http settings out of range");
  }
  if (c.backend == "http" && c.backend_url.empty()) {
    throw Error(ErrorCode::kConfig, std::string("http backend needs run.backend_url or ") + kBackendUrlEnv);
  }
}

// Parses INI text. `base` resolves relative paths. Overrides are
// "section.key=value" strings applied after the file; the backend URL
// environment variable sits between the two.
inline RunConfig ParseRunConfig(const std::string& text, const std::filesystem::path& base,
                                const std::vector<std::string>& overrides = {}) {
  detail::Tree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  RunConfig c;
  // Presets first, so explicit keys in the same file win.
  if (const auto mode = tree.get_optional<std::string>("bootstrap.mode")) {
    SetConfigValue(c, base, "bootstrap", "mode", *mode);
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorCode::kConfig, "config: key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : body) {
      if (section == "bootstrap" && key == "mode") continue;
      SetConfigValue(c, base, section, key, value.data());
    }
  }
  if (const char* url = std::getenv(kBackendUrlEnv); url != nullptr && *url != '\0') {
    c.backend_url = url;
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw Error(ErrorCode::kConfig, "override '" + o + "' must look like section.key=value");
    }
    // Task sections contain a dot themselves: split at the last dot before '='.
    const auto split = o.rfind('.', eq);
    SetConfigValue(c, std::filesystem::current_path(), Trim(o.substr(0, split)),
                   Trim(o.substr(split + 1, eq - split - 1)), o.substr(eq + 1));
  }
  if (!c.thresholds_file.empty() && std::filesystem::exists(c.thresholds_file)) {
    for (const auto& [task, b] : LoadThresholds(c.thresholds_file)) {
      if (!c.bootstrap.tasks[task].fixed_threshold) c.bootstrap.tasks[task].threshold = b;
    }
  }
  c.bootstrap.seed = c.Substream("bootstrap");
  ValidateRunConfig(c);
  return c;
}

inline RunConfig LoadRunConfig(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides = {}) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kConfig, "config file not found: " + path.string());
  }
  return ParseRunConfig(ReadFile(path), path.parent_path(), overrides);
}

}  // namespace kgboot
