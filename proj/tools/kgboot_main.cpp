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

// kgboot command-line interface. Failures print "E_<CODE>: message" on one
// line to stderr and exit nonzero.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kgboot/config.hpp"
#include "kgboot/conformance.hpp"
#include "kgboot/dataset.hpp"
#include "kgboot/evaluation.hpp"
#include "kgboot/http.hpp"
#include "kgboot/run.hpp"
#include "kgboot/synthetic.hpp"
#include "kgboot/threshold_search.hpp"

namespace {

using namespace kgboot;

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::string model;

  RunConfig Load() const {
    if (config.empty()) return ParseRunConfig("", fs::current_path(), sets);
    return LoadRunConfig(config, sets);
  }
  std::optional<fs::path> Model() const {
    return model.empty() ? std::nullopt : std::optional<fs::path>(model);
  }
};

void Require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kConfig, what);
}

const std::vector<Example>& Split(const RunData& d, const std::string& split) {
  if (split == "test") return d.test;
  if (split == "validation") return d.validation;
  if (split == "train") return d.train;
  throw Error(ErrorCode::kInvalidArgument, "unknown split '" + split + "'");
}

void Synth(const std::string& out, const SyntheticSpec& spec) {
  const auto task = GenerateSyntheticTask(spec);
  const fs::path dir(out);
  fs::create_directories(dir);
  WriteFileAtomic(dir / "corpus.jsonl", SerializeCorpus(task.corpus));
  WriteFileAtomic(dir / "train.jsonl", SerializeDataset(task.train));
  WriteFileAtomic(dir / "valid.jsonl", SerializeDataset(task.validation));
  WriteFileAtomic(dir / "test.jsonl", SerializeDataset(task.test));
  WriteFileAtomic(dir / "seed_pairs.jsonl", SerializeTrainingPairs(task.seed_pairs));
  std::cout << "wrote " << task.corpus.size() << " documents, " << task.train.size() << "/"
            << task.validation.size() << "/" << task.test.size() << " examples, " << task.seed_pairs.size()
            << " seed pairs to " << dir.string() << "\n";
}

void Index(const Globals& g, std::string corpus, std::string out) {
  const auto c = g.Load();
  if (corpus.empty()) corpus = c.corpus.string();
  if (out.empty()) out = c.index.string();
  Require(!corpus.empty(), "index: no corpus (run.corpus or --corpus)");
  Require(!out.empty(), "index: no output path (run.index or --out)");
  const auto index = Bm25Index::Build(LoadCorpus(corpus));
  WriteFileAtomic(out, index.Serialize());
  std::cout << "indexed " << index.size() << " documents into " << out << "\n";
}

void Bootstrap(const Globals& g, int iteration, std::string out) {
  const auto c = g.Load();
  const auto data = LoadRunData(c);
  Require(!data.train.empty(), "bootstrap: run.train is not set or empty");
  auto backend = BackendForEval(c, g.Model());
  ResponseSetStore store(data.train, c.bootstrap.h);
  IterationOptions opts;
  opts.finetune = false;
  const auto result = RunIteration(*backend, data.index_ptr(), data.train, store, c.bootstrap, iteration, opts);
  if (out.empty()) {
    Require(!c.output_dir.empty(), "bootstrap: no output path (run.output_dir or --out)");
    fs::create_directories(c.output_dir);
    out = (c.output_dir / IterationFile("bootstrap", iteration, ".jsonl")).string();
  }
  WriteFileAtomic(out, SerializeBootstrapFile(result.records));
  std::cout << ToJson(result.stats).dump(2) << "\n";
}

void Iterate(const Globals& g, int n) {
  const auto c = g.Load();
  RunSession run(c, LoadRunData(c), [](const std::string& line) { std::cerr << line << "\n"; });
  for (int i = 0; i < n; ++i) run.Step();
  std::cout << ToJson(run.state()).dump(2) << "\n";
}

void Eval(const Globals& g, const std::string& split, const std::string& json) {
  const auto c = g.Load();
  const auto data = LoadRunData(c);
  const auto backend = BackendForEval(c, g.Model());
  PipelineCounters counters;
  const auto report = EvalEndToEnd(*backend, data.index_ptr(), Split(data, split), OptionsFrom(c.bootstrap),
                                   c.Substream("eval"), &counters);
  std::cout << RenderTable(report);
  if (!json.empty()) WriteFileAtomic(json, ToJson(report).dump(2) + "\n");
}

void Diversity(const Globals& g, const std::string& split, const std::string& json) {
  const auto c = g.Load();
  const auto data = LoadRunData(c);
  const auto backend = BackendForEval(c, g.Model());
  const auto report = EvalDiversity(
      *backend, data.index_ptr(), Split(data, split), c.eval_samples, OptionsFrom(c.bootstrap),
      [&](const std::string& task) { return c.bootstrap.Task(task).threshold; }, c.Substream("diversity"),
      c.bootstrap.similarity);
  std::cout << RenderTable(report);
  if (!json.empty()) WriteFileAtomic(json, ToJson(report).dump(2) + "\n");
}

void SearchThresholds(const Globals& g, const std::vector<std::string>& tasks, std::string out, int iteration) {
  const auto c = g.Load();
  const auto data = LoadRunData(c);
  if (out.empty()) out = c.thresholds_file.string();
  Require(!out.empty(), "threshold-search: no output path (run.thresholds_file or --out)");
  Require(!data.validation.empty(), "threshold-search: run.validation is not set or empty");
  const auto backend = BackendForEval(c, g.Model());
  Thresholds thresholds = fs::exists(out) ? LoadThresholds(out) : Thresholds{};
  for (const auto& task : tasks) {
    if (c.bootstrap.Task(task).fixed_threshold) {
      std::cout << task << ": fixed at " << FormatScore(c.bootstrap.Task(task).threshold) << "\n";
      thresholds[task] = c.bootstrap.Task(task).threshold;
      continue;
    }
    ThresholdSearchSetup s;
    s.backend = backend.get();
    s.index = data.index_ptr();
    s.config = c.bootstrap;
    s.task = task;
    s.iteration = iteration;
    s.samples = c.trial_samples;
    for (const auto& ex : data.train) {
      if (ex.task == task) s.train.push_back(ex);
    }
    for (const auto& ex : data.validation) {
      if (ex.task == task && s.validation.size() < c.validation_size) s.validation.push_back(ex);
    }
    const auto result = SearchTaskThreshold(s, c.grid, c.pick);
    std::cout << task << ": baseline " << FormatScore(result.baseline);
    for (const auto& trial : result.trials) {
      std::cout << ", b=" << FormatScore(trial.threshold) << " -> " << FormatScore(trial.score);
    }
    std::cout << "; chose " << FormatScore(result.threshold) << "\n";
    if (result.warning) std::cerr << "warning: " << task << ": " << *result.warning << "\n";
    thresholds[task] = result.threshold;
  }
  SaveThresholds(out, thresholds);
}

void Analyze(const Globals& g, const std::string& metric, const std::vector<std::string>& files,
             const std::string& split) {
  if (metric == "boot-rate") {
    std::int64_t accepted = 0, attempted = 0;
    for (const auto& f : files) {
      Json j;
      try {
        j = Json::parse(ReadFile(f));
        accepted += j.at("accepted").get<std::int64_t>();
        attempted += j.at("attempted").get<std::int64_t>();
      } catch (const Json::exception& e) {
        throw Error(ErrorCode::kIo, f + ": not an iteration stats file: " + e.what());
      }
    }
    const double rate = BootstrappingRate(accepted, attempted);
    std::cout << "bootstrapping_rate " << FormatScore(rate) << "\n";
    return;
  }
  const auto c = g.Load();
  const auto data = LoadRunData(c);
  std::vector<BootstrapRecord> records;
  for (const auto& f : files) {
    auto part = LoadBootstrapFile(f);
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto& dataset = Split(data, split);
  if (metric == "copy-rate") {
    const double rate = AnalyzeCopyRate(records, dataset);
    std::cout << "copy_rate " << FormatScore(rate) << "\n";
  } else if (metric == "overlap") {
    const double overlap = AnalyzeKnowledgeOverlap(records, dataset, c.overlap_exclude);
    std::cout << "knowledge_overlap " << FormatScore(overlap) << "\n";
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown analysis '" + metric + "'");
  }
}

void ServeToy(const Globals& g, const std::string& host, int port) {
  const auto c = g.Load();
  auto backend = g.Model() ? LoadToyModel(*g.Model()) : std::make_unique<ToyBackend>(c.Substream("backend"), c.toy);
  BackendServer server(*backend);
  const int bound = server.Bind(host, port);
  std::cout << "serving toy backend on http://" << host << ":" << bound << std::endl;
  server.Serve();
}

int Conformance(const std::string& url, bool relaxed) {
  ConformanceOptions opts;
  opts.require_seed_determinism = !relaxed;
  const auto report = RunConformance(url, opts);
  for (const auto& check : report.checks) {
    std::cout << (check.passed ? "PASS " : "FAIL ") << check.name;
    if (!check.passed) std::cout << ": " << check.detail;
    std::cout << "\n";
  }
  if (!report.passed()) {
    throw Error(ErrorCode::kBackend, "conformance failed for " + url);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-improving bootstrapping for modular knowledge-grounded dialogue"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config, "INI run configuration");
  app.add_option("--set", g.sets, "override a config key: section.key=value")->take_all();

  SyntheticSpec spec;
  std::string synth_out = "data";
  auto* synth = app.add_subcommand("synth", "write the synthetic QA task");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", spec.seed);
  synth->add_option("--documents", spec.documents);
  synth->add_option("--train", spec.train);
  synth->add_option("--validation", spec.validation);
  synth->add_option("--test", spec.test);
  synth->add_option("--seed-pairs", spec.seed_pairs);

  std::string corpus, out;
  auto* index = app.add_subcommand("index", "build a BM25 index file");
  index->add_option("--corpus", corpus);
  index->add_option("--out", out);

  int iteration = 0;
  auto* bootstrap = app.add_subcommand("bootstrap", "run one bootstrapping iteration without finetuning");
  bootstrap->add_option("--iteration", iteration);
  bootstrap->add_option("--out", out, "bootstrap file to write");
  bootstrap->add_option("--model", g.model, "toy model file");

  int n_iterations = 1;
  auto* iterate = app.add_subcommand("iterate", "run checkpointed self-improving iterations");
  iterate->add_option("-n,--iterations", n_iterations)->check(CLI::PositiveNumber);

  std::string split = "test", json;
  auto* eval = app.add_subcommand("eval", "end-to-end evaluation");
  auto* diversity = app.add_subcommand("diversity", "matching rate, Self-BLEU and Distinct-2");
  for (auto* sub : {eval, diversity}) {
    sub->add_option("--split", split)->check(CLI::IsMember({"train", "validation", "test"}));
    sub->add_option("--json", json, "machine-readable report");
    sub->add_option("--model", g.model, "toy model file");
  }

  std::vector<std::string> tasks;
  auto* thresholds = app.add_subcommand("threshold-search", "greedy per-task threshold search");
  thresholds->add_option("--task", tasks)->required();
  thresholds->add_option("--out", out, "thresholds file");
  thresholds->add_option("--iteration", iteration);
  thresholds->add_option("--model", g.model, "toy model file");

  std::string metric;
  std::vector<std::string> files;
  auto* analyze = app.add_subcommand("analyze", "copy rate, knowledge overlap or bootstrapping rate");
  analyze->add_option("metric", metric)->required()->check(CLI::IsMember({"copy-rate", "overlap", "boot-rate"}));
  analyze->add_option("files", files, "bootstrap files, or stats files for boot-rate")->required();
  std::string records_split = "train";
  analyze->add_option("--split", records_split, "dataset the records refer to");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve-toy", "serve the toy backend over HTTP");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--model", g.model, "toy model file");

  std::string url;
  bool relaxed = false;
  auto* conformance = app.add_subcommand("conformance", "check a server against the wire protocol");
  conformance->add_option("--url", url)->envname(kBackendUrlEnv)->required();
  conformance->add_flag("--relaxed", relaxed, "do not require identical outputs under a seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "E_USAGE: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) Synth(synth_out, spec);
    if (*index) Index(g, corpus, out);
    if (*bootstrap) Bootstrap(g, iteration, out);
    if (*iterate) Iterate(g, n_iterations);
    if (*eval) Eval(g, split, json);
    if (*diversity) Diversity(g, split, json);
    if (*thresholds) SearchThresholds(g, tasks, out, iteration);
    if (*analyze) Analyze(g, metric, files, records_split);
    if (*serve) ServeToy(g, host, port);
    if (*conformance) return Conformance(url, relaxed);
  } catch (const Error& e) {
    std::cerr << ErrorCodeName(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
