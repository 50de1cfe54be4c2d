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

// JSON-lines dataset files.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/error.hpp"
#include "kgboot/io.hpp"
#include "kgboot/pipeline.hpp"

namespace kgboot {

inline std::vector<Example> LoadDataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kIo, "dataset not found: " + path.string());
  }
  std::vector<Example> out;
  std::set<std::string> ids;
  ForEachJsonLine(path, [&](std::size_t line, const Json& j) {
    const std::string where = path.filename().string() + ":" + std::to_string(line);
    auto ex = ExampleFromJson(j, where);
    if (!ids.insert(ex.id).second) {
      throw Error(ErrorCode::kDataset, where + ": duplicate id '" + ex.id + "'");
    }
    out.push_back(std::move(ex));
  });
  return out;
}

inline std::string SerializeDataset(const std::vector<Example>& examples) {
  std::vector<Json> rows;
  for (const auto& ex : examples) rows.push_back(ToJson(ex));
  return ToJsonLines(rows);
}

inline std::vector<TrainingPair> LoadTrainingPairs(const std::filesystem::path& path) {
  std::vector<TrainingPair> out;
  ForEachJsonLine(path, [&](std::size_t line, const Json& j) {
    try {
      out.push_back(TrainingPairFromJson(j));
    } catch (const Error& e) {
      throw Error(ErrorCode::kDataset, path.filename().string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

inline std::string SerializeTrainingPairs(const std::vector<TrainingPair>& pairs) {
  std::vector<Json> rows;
  for (const auto& p : pairs) rows.push_back(ToJson(p));
  return ToJsonLines(rows);
}

inline std::string SerializeCorpus(const std::vector<Document>& corpus) {
  std::vector<Json> rows;
  for (const auto& d : corpus) rows.push_back(ToJson(d));
  return ToJsonLines(rows);
}

}  // namespace kgboot
