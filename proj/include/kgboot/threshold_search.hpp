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

// Greedy per-task search for the matching threshold.

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/bootstrap.hpp"
#include "kgboot/error.hpp"
#include "kgboot/evaluation.hpp"
#include "kgboot/io.hpp"

namespace kgboot {

struct ThresholdGrid {
  double start = 0.2;
  double step = 0.05;
  int max_steps = 10;
};

// kLastImproving returns the last value that beat its predecessor;
// kLastTried returns the value the search stopped on.
enum class ThresholdPick { kLastImproving, kLastTried };

struct ThresholdTrial {
  double threshold = 0.0;
  double score = 0.0;
  bool improved = false;
};

struct ThresholdSearchResult {
  double threshold = 0.0;
  double baseline = 0.0;
  std::vector<ThresholdTrial> trials;
  std::optional<std::string> warning;
};

// Grid points are snapped to 1e-9 so that 0.2 + 0.05 * 2 prints as 0.3.
inline double GridValue(const ThresholdGrid& grid, int i) {
  return std::round((grid.start + grid.step * i) * 1e9) / 1e9;
}

// `trial` maps a threshold to a validation score; `baseline` is the score
// before any trial. Improvement is strict.
inline ThresholdSearchResult SearchThreshold(const std::function<double(double)>& trial,
                                             double baseline, const ThresholdGrid& grid = {},
                                             ThresholdPick pick = ThresholdPick::kLastImproving) {
  if (grid.max_steps < 1) throw Error(ErrorCode::kInvalidArgument, "threshold search: max_steps must be >= 1");
  if (!(grid.start >= 0 && grid.start <= 1) || !(grid.step > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold search: bad grid");
  }
  ThresholdSearchResult result;
  result.baseline = baseline;
  double best = baseline;
  std::optional<double> last_improving;
  for (int i = 0; i < grid.max_steps; ++i) {
    const double b = GridValue(grid, i);
    if (b > 1.0) break;
    const double score = trial(b);
    const bool improved = score > best;
    result.trials.push_back({b, score, improved});
    if (!improved) break;
    best = score;
    last_improving = b;
  }
  if (!last_improving) {
    result.threshold = grid.start;
    result.warning = "no threshold improved validation score; using start value";
  } else if (pick == ThresholdPick::kLastTried) {
    result.threshold = result.trials.back().threshold;
  } else {
    result.threshold = *last_improving;
  }
  return result;
}

struct ThresholdSearchSetup {
  const Backend* backend = nullptr;  // never modified; trials run on clones
  const Bm25Index* index = nullptr;
  std::vector<Example> train;       // examples of the task
  std::vector<Example> validation;  // validation subset of the task
  BootstrapConfig config;
  std::string task;
  int iteration = 0;
  std::int64_t samples = 0;  // records per trial; 0 uses the schedule
};

inline double ValidationRougeL(const Backend& backend, const ThresholdSearchSetup& s) {
  return EvalEndToEnd(backend, s.index, s.validation, OptionsFrom(s.config),
                      SubstreamSeed(s.config.seed, "validation"))
      .overall.rouge_l;
}

// One bootstrap-and-finetune trial per grid value, scored by validation ROUGE-L.
inline ThresholdSearchResult SearchTaskThreshold(const ThresholdSearchSetup& s,
                                                 const ThresholdGrid& grid = {},
                                                 ThresholdPick pick = ThresholdPick::kLastImproving) {
  if (s.backend == nullptr) throw Error(ErrorCode::kInvalidArgument, "threshold search: no backend");
  if (s.validation.empty()) throw Error(ErrorCode::kEmpty, "threshold search: empty validation subset");
  if (s.train.empty()) throw Error(ErrorCode::kEmpty, "threshold search: no training examples");
  const double baseline = ValidationRougeL(*s.backend, s);
  const auto trial = [&](double b) {
    auto scratch = s.backend->Clone();
    BootstrapConfig config = s.config;
    config.tasks[s.task].threshold = b;
    ResponseSetStore store(s.train, config.h);
    IterationOptions opts;
    if (s.samples > 0) opts.target = s.samples;
    RunIteration(*scratch, s.index, s.train, store, config, s.iteration, opts);
    return ValidationRougeL(*scratch, s);
  };
  return SearchThreshold(trial, baseline, grid, pick);
}

using Thresholds = std::map<std::string, double>;

inline void SaveThresholds(const std::filesystem::path& path, const Thresholds& thresholds) {
  WriteFileAtomic(path, Json(thresholds).dump(2) + "\n");
}

inline Thresholds LoadThresholds(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(ReadFile(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kConfig, path.string() + ": expected an object");
  Thresholds out;
  for (const auto& [task, v] : j.items()) {
    if (!v.is_number()) throw Error(ErrorCode::kConfig, path.string() + ": threshold for '" + task + "' is not a number");
    const double b = v.get<double>();
    if (!(b >= 0 && b <= 1)) throw Error(ErrorCode::kConfig, "threshold for '" + task + "' must be in [0,1]");
    out[task] = b;
  }
  return out;
}

inline void ApplyThresholds(BootstrapConfig& config, const Thresholds& thresholds) {
  for (const auto& [task, b] : thresholds) config.tasks[task].threshold = b;
}

}  // namespace kgboot
