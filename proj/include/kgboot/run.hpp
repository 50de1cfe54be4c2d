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

// Run orchestration: data loading, backend construction and checkpointed
// self-improving iterations.
//
// Output directory layout for iteration t:
//   bootstrap_t{t}.jsonl  accepted records
//   stats_t{t}.json       iteration counters
//   model_t{t+1}.json     toy backend after finetuning
//   rs_t{t+1}.jsonl       response sets after the iteration
//   state.json            written last; names the next iteration to run
// A crash before state.json is replaced leaves the previous checkpoint in
// charge, so the iteration is redone from the same inputs.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kgboot/bootstrap.hpp"
#include "kgboot/config.hpp"
#include "kgboot/dataset.hpp"
#include "kgboot/http.hpp"
#include "kgboot/io.hpp"
#include "kgboot/retrieval.hpp"
#include "kgboot/toy_backend.hpp"

namespace kgboot {

namespace fs = std::filesystem;

struct RunData {
  std::optional<Bm25Index> index;
  std::vector<Example> train, validation, test;
  std::vector<TrainingPair> seed_pairs;

  const Bm25Index* index_ptr() const { return index ? &*index : nullptr; }
};

inline std::optional<Bm25Index> LoadIndex(const RunConfig& c) {
  if (!c.index.empty() && fs::exists(c.index)) return Bm25Index::Load(c.index);
  if (!c.corpus.empty()) return Bm25Index::Build(LoadCorpus(c.corpus));
  return std::nullopt;
}

// Loads whatever paths the config names; absent paths stay empty.
inline RunData LoadRunData(const RunConfig& c) {
  RunData d;
  d.index = LoadIndex(c);
  if (!c.train.empty()) d.train = LoadDataset(c.train);
  if (!c.validation.empty()) d.validation = LoadDataset(c.validation);
  if (!c.test.empty()) d.test = LoadDataset(c.test);
  if (!c.seed_pairs.empty()) d.seed_pairs = LoadTrainingPairs(c.seed_pairs);
  return d;
}

inline std::unique_ptr<Backend> MakeBackend(const RunConfig& c) {
  if (c.backend == "http") return std::make_unique<HttpBackend>(c.backend_url, c.http);
  return std::make_unique<ToyBackend>(c.Substream("backend"), c.toy);
}

inline std::unique_ptr<Backend> LoadToyModel(const fs::path& path) {
  try {
    return std::make_unique<ToyBackend>(ToyBackend::Load(Json::parse(ReadFile(path))));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIo, path.string() + ": " + e.what());
  }
}

struct RunState {
  int iteration = 0;  // next iteration to run
  std::uint64_t seed = 0;
  std::string backend;
  std::string backend_version;
  std::string model_path;          // relative to the output directory; empty for http
  std::string response_sets_path;  // relative to the output directory
  Thresholds thresholds;
  std::vector<Json> history;
};

inline Json ToJson(const RunState& s) {
  return Json{{"iteration", s.iteration},
              {"seed", s.seed},
              {"backend", s.backend},
              {"backend_version", s.backend_version},
              {"model_path", s.model_path},
              {"response_sets_path", s.response_sets_path},
              {"thresholds", s.thresholds},
              {"history", s.history}};
}

inline RunState LoadRunState(const fs::path& path) {
  try {
    const Json j = Json::parse(ReadFile(path));
    RunState s;
    s.iteration = j.at("iteration").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.backend = j.at("backend").get<std::string>();
    s.backend_version = j.at("backend_version").get<std::string>();
    s.model_path = j.at("model_path").get<std::string>();
    s.response_sets_path = j.at("response_sets_path").get<std::string>();
    s.thresholds = j.at("thresholds").get<Thresholds>();
    s.history = j.at("history").get<std::vector<Json>>();
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIo, path.string() + ": corrupt run state: " + e.what());
  }
}

inline Thresholds TaskThresholds(const BootstrapConfig& b) {
  Thresholds out;
  for (const auto& [task, s] : b.tasks) out[task] = s.threshold;
  return out;
}

inline std::string IterationFile(const char* stem, int t, const char* ext) {
  return std::string(stem) + "_t" + std::to_string(t) + ext;
}

// Finetunes on seed pairs in mini-batches.
inline void WarmStart(Backend& backend, const std::vector<TrainingPair>& pairs, const BootstrapConfig& b) {
  for (std::size_t begin = 0; begin < pairs.size(); begin += b.batch_size) {
    const std::size_t end = std::min(pairs.size(), begin + b.batch_size);
    backend.Finetune(std::span<const TrainingPair>(pairs.data() + begin, end - begin), b.learning_rate);
  }
}

class RunSession {
 public:
  using Log = std::function<void(const std::string&)>;

  // Opens the run in config.output_dir, resuming from state.json when present.
  RunSession(RunConfig config, RunData data, Log log = {})
      : config_(std::move(config)), data_(std::move(data)), log_(std::move(log)) {
    if (config_.output_dir.empty()) throw Error(ErrorCode::kConfig, "run.output_dir is not set");
    if (data_.train.empty()) throw Error(ErrorCode::kConfig, "run.train is not set or empty");
    fs::create_directories(config_.output_dir);
    store_ = std::make_unique<ResponseSetStore>(data_.train, config_.bootstrap.h);
    const fs::path state_path = config_.output_dir / "state.json";
    if (fs::exists(state_path)) {
      Resume(LoadRunState(state_path));
    } else {
      Fresh();
    }
  }

  const RunState& state() const { return state_; }
  Backend& backend() { return *backend_; }
  const RunData& data() const { return data_; }

  // Runs one iteration and checkpoints it.
  IterationResult Step(PipelineCounters* counters = nullptr) {
    const int t = state_.iteration;
    auto result = RunIteration(*backend_, data_.index_ptr(), data_.train, *store_, config_.bootstrap, t, {},
                               counters);
    const fs::path& out = config_.output_dir;
    WriteFileAtomic(out / IterationFile("bootstrap", t, ".jsonl"), SerializeBootstrapFile(result.records));
    WriteFileAtomic(out / IterationFile("stats", t, ".json"), ToJson(result.stats).dump(2) + "\n");
    state_.iteration = t + 1;
    state_.history.push_back(ToJson(result.stats));
    Checkpoint();
    if (log_) {
      log_("iteration " + std::to_string(t) + ": accepted " + std::to_string(result.stats.accepted) + "/" +
           std::to_string(result.stats.attempted) + " (rate " + FormatRate(result.stats.bootstrapping_rate()) +
           "), version " + result.stats.version);
    }
    return result;
  }

 private:
  static std::string FormatRate(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", r);
    return buf;
  }

  void Fresh() {
    backend_ = MakeBackend(config_);
    if (!data_.seed_pairs.empty()) WarmStart(*backend_, data_.seed_pairs, config_.bootstrap);
    state_.seed = config_.seed;
    state_.backend = config_.backend;
    Checkpoint();
    if (log_) log_("started run in " + config_.output_dir.string());
  }

  void Resume(RunState s) {
    if (s.seed != config_.seed) {
      throw Error(ErrorCode::kConfig, "run.seed " + std::to_string(config_.seed) + " differs from the resumed run's " +
                                          std::to_string(s.seed));
    }
    if (s.backend != config_.backend) {
      throw Error(ErrorCode::kConfig, "run.backend differs from the resumed run's '" + s.backend + "'");
    }
    const fs::path& out = config_.output_dir;
    if (config_.backend == "toy") {
      backend_ = LoadToyModel(out / s.model_path);
    } else {
      backend_ = MakeBackend(config_);
      const auto served = backend_->Version();
      if (served != s.backend_version) {
        throw Error(ErrorCode::kBackend, "served model version " + served + " does not match checkpoint " +
                                             s.backend_version + "; restore the server's model first");
      }
    }
    store_->Restore(out / s.response_sets_path);
    state_ = std::move(s);
    if (log_) log_("resuming at iteration " + std::to_string(state_.iteration));
  }

  void Checkpoint() {
    const fs::path& out = config_.output_dir;
    const int t = state_.iteration;
    state_.backend_version = backend_->Version();
    state_.thresholds = TaskThresholds(config_.bootstrap);
    if (auto* toy = dynamic_cast<ToyBackend*>(backend_.get())) {
      state_.model_path = IterationFile("model", t, ".json");
      WriteFileAtomic(out / state_.model_path, toy->Save().dump() + "\n");
    }
    state_.response_sets_path = IterationFile("rs", t, ".jsonl");
    WriteFileAtomic(out / state_.response_sets_path, store_->Serialize());
    WriteFileAtomic(out / "state.json", ToJson(state_).dump(2) + "\n");
  }

  RunConfig config_;
  RunData data_;
  Log log_;
  std::unique_ptr<Backend> backend_;
  std::unique_ptr<ResponseSetStore> store_;
  RunState state_;
};

// Backend for evaluation commands: an explicit toy model file, else the
// latest checkpoint in the output directory, else a fresh backend.
inline std::unique_ptr<Backend> BackendForEval(const RunConfig& c, const std::optional<fs::path>& model) {
  if (model) return LoadToyModel(*model);
  if (c.backend == "toy" && !c.output_dir.empty() && fs::exists(c.output_dir / "state.json")) {
    return LoadToyModel(c.output_dir / LoadRunState(c.output_dir / "state.json").model_path);
  }
  return MakeBackend(c);
}

}  // namespace kgboot
