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

// The generative model interface: conditional generation plus a finetune
// entry point. Implementations: ToyBackend (in process) and HttpBackend
// (wire protocol client).

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgboot/error.hpp"
#include "kgboot/io.hpp"
#include "kgboot/prompt.hpp"

namespace kgboot {

struct GenerationRequest {
  std::string prompt;
  std::optional<ControlToken> control;  // absent for final response generation
  int n = 1;
  double temperature = 1.0;
  double top_p = 0.9;
  int max_tokens = 64;
  std::uint64_t seed = 0;

  void Validate() const {
    if (n < 1) throw Error(ErrorCode::kInvalidArgument, "generation request: n must be >= 1");
    if (!(temperature > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "generation request: temperature must be > 0");
    }
    if (!(top_p > 0 && top_p <= 1)) {
      throw Error(ErrorCode::kInvalidArgument, "generation request: top_p must be in (0, 1]");
    }
    if (max_tokens < 1) {
      throw Error(ErrorCode::kInvalidArgument, "generation request: max_tokens must be >= 1");
    }
  }
};

// Client-side limits for remote backends.
struct HttpOptions {
  int timeout_ms = 30000;
  int retries = 2;
  int max_in_flight = 4;
};

struct GenerationResult {
  std::vector<std::string> texts;
};

struct TrainingPair {
  std::string input;
  std::string target;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

class Backend {
 public:
  virtual ~Backend() = default;

  // Read-only; safe to call concurrently.
  virtual GenerationResult Generate(const GenerationRequest& request) const = 0;

  // Exclusive. Returns the new version id.
  virtual std::string Finetune(std::span<const TrainingPair> pairs, double lr) = 0;

  virtual std::string Version() const = 0;

  // Independent copy for scratch trials. Remote backends cannot be copied and
  // throw.
  virtual std::unique_ptr<Backend> Clone() const = 0;
};

// Wire encodings.

inline Json ToJson(const GenerationRequest& r) {
  return Json{{"prompt", r.prompt},
              {"control", r.control ? Json(std::string(ControlTokenText(*r.control))) : Json()},
              {"n", r.n},
              {"temperature", r.temperature},
              {"top_p", r.top_p},
              {"max_tokens", r.max_tokens},
              {"seed", r.seed}};
}

inline GenerationRequest GenerationRequestFromJson(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "request must be an object");
  GenerationRequest r;
  try {
    r.prompt = j.at("prompt").get<std::string>();
    if (j.contains("control") && !j["control"].is_null()) {
      const auto text = j["control"].get<std::string>();
      r.control = ParseControlToken(text);
      if (!r.control) throw Error(ErrorCode::kInvalidArgument, "unknown control token " + text);
    }
    r.n = j.value("n", 1);
    r.temperature = j.value("temperature", 1.0);
    r.top_p = j.value("top_p", 0.9);
    r.max_tokens = j.value("max_tokens", 64);
    r.seed = j.value("seed", std::uint64_t{0});
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed generation request: ") + e.what());
  }
  r.Validate();
  return r;
}

inline Json ToJson(const TrainingPair& p) {
  return Json{{"input", p.input}, {"target", p.target}};
}

inline TrainingPair TrainingPairFromJson(const Json& j) {
  try {
    return TrainingPair{j.at("input").get<std::string>(), j.at("target").get<std::string>()};
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed training pair: ") + e.what());
  }
}

}  // namespace kgboot
