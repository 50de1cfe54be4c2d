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

// Golden conformance suite for servers speaking the backend wire protocol.
// Talks raw HTTP so status codes and error bodies are visible.

#include <httplib.h>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/io.hpp"

namespace kgboot {

struct ConformanceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ConformanceOptions {
  // Servers wrapping neural models may not reproduce outputs under a seed;
  // they then only need schema-valid answers.
  bool require_seed_determinism = true;
  double learning_rate = 2e-6;
  int timeout_ms = 30000;
};

struct ConformanceReport {
  std::vector<ConformanceCheck> checks;
  bool passed() const {
    for (const auto& c : checks) {
      if (!c.passed) return false;
    }
    return !checks.empty();
  }
};

namespace conformance_detail {

struct Answer {
  int status = 0;
  std::optional<Json> body;
  std::string transport_error;
};

inline Answer Send(const std::string& url, const std::string& method, const std::string& path,
                   const std::string& payload, int timeout_ms) {
  httplib::Client client(url);
  const auto timeout = std::chrono::milliseconds(timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  const auto res = method == "GET" ? client.Get(path) : client.Post(path, payload, "application/json");
  Answer a;
  if (!res) {
    a.transport_error = httplib::to_string(res.error());
    return a;
  }
  a.status = res->status;
  try {
    a.body = Json::parse(res->body);
  } catch (const Json::exception&) {
  }
  return a;
}

inline std::string Describe(const Answer& a) {
  if (!a.transport_error.empty()) return "transport: " + a.transport_error;
  return "status " + std::to_string(a.status) + ", body " + (a.body ? a.body->dump() : "<not JSON>");
}

inline bool HasTexts(const Answer& a, int n) {
  if (a.status != 200 || !a.body || !a.body->is_object() || !a.body->contains("texts")) return false;
  const Json& texts = (*a.body)["texts"];
  if (!texts.is_array() || static_cast<int>(texts.size()) != n) return false;
  for (const auto& t : texts) {
    if (!t.is_string()) return false;
  }
  return true;
}

inline bool HasVersion(const Answer& a) {
  return a.status == 200 && a.body && a.body->is_object() && a.body->contains("version") &&
         (*a.body)["version"].is_string();
}

inline bool IsClientError(const Answer& a) {
  return a.status >= 400 && a.status < 500 && a.body && a.body->is_object() && a.body->contains("error") &&
         (*a.body)["error"].is_string() && !(*a.body)["error"].get<std::string>().empty();
}

}  // namespace conformance_detail

inline constexpr const char* kConformancePrompt = "user: which bird swims on the pond";
inline constexpr const char* kConformanceTarget = "a grey heron";

// Mutates the server: the last checks finetune it.
inline ConformanceReport RunConformance(const std::string& url, const ConformanceOptions& options = {}) {
  using namespace conformance_detail;
  ConformanceReport report;
  const auto check = [&](std::string name, const std::function<std::optional<std::string>()>& body) {
    ConformanceCheck c{std::move(name), false, ""};
    try {
      const auto failure = body();
      c.passed = !failure;
      if (failure) c.detail = *failure;
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    report.checks.push_back(std::move(c));
  };
  const auto post = [&](const std::string& path, const std::string& payload) {
    return Send(url, "POST", path, payload, options.timeout_ms);
  };
  const auto generate = [&](int n, std::optional<ControlToken> control, std::uint64_t seed, double temperature) {
    GenerationRequest r;
    r.prompt = kConformancePrompt;
    r.control = control;
    r.n = n;
    r.seed = seed;
    r.temperature = temperature;
    return post("/generate", ToJson(r).dump());
  };

  check("health returns a version", [&]() -> std::optional<std::string> {
    const auto a = Send(url, "GET", "/health", "", options.timeout_ms);
    if (!HasVersion(a)) return Describe(a);
    return std::nullopt;
  });
  for (int n : {1, 3}) {
    for (bool with_control : {false, true}) {
      const std::string name = "generate n=" + std::to_string(n) + (with_control ? " with control" : " without control");
      check(name, [&, n, with_control]() -> std::optional<std::string> {
        const auto a = generate(n, with_control ? std::optional(ControlToken::kGenerateKnowledge) : std::nullopt, 5, 1.0);
        if (!HasTexts(a, n)) return Describe(a);
        return std::nullopt;
      });
    }
  }
  if (options.require_seed_determinism) {
    check("generate is deterministic under a seed", [&]() -> std::optional<std::string> {
      const auto a = generate(4, std::nullopt, 17, 1.0);
      const auto b = generate(4, std::nullopt, 17, 1.0);
      if (!HasTexts(a, 4) || !HasTexts(b, 4)) return Describe(a) + " / " + Describe(b);
      if ((*a.body)["texts"] != (*b.body)["texts"]) return "texts differ for the same seed";
      return std::nullopt;
    });
  }

  GenerationRequest base;
  base.prompt = kConformancePrompt;
  const Json valid = ToJson(base);
  const auto reject = [&](std::string name, std::string path, std::string payload) {
    check(std::move(name), [&, path, payload]() -> std::optional<std::string> {
      const auto a = post(path, payload);
      if (!IsClientError(a)) return "expected 4xx with an error body, got " + Describe(a);
      return std::nullopt;
    });
  };
  {
    Json j = valid;
    j.erase("prompt");
    reject("generate rejects a missing prompt", "/generate", j.dump());
  }
  {
    Json j = valid;
    j["n"] = 0;
    reject("generate rejects n=0", "/generate", j.dump());
  }
  {
    Json j = valid;
    j["temperature"] = 0.0;
    reject("generate rejects temperature<=0", "/generate", j.dump());
  }
  {
    Json j = valid;
    j["top_p"] = 1.5;
    reject("generate rejects top_p>1", "/generate", j.dump());
  }
  {
    Json j = valid;
    j["control"] = "__not-a-token__";
    reject("generate rejects an unknown control token", "/generate", j.dump());
  }
  reject("generate rejects malformed JSON", "/generate", "{\"prompt\": ");
  reject("finetune rejects an empty batch", "/finetune", Json{{"pairs", Json::array()}, {"lr", 2e-6}}.dump());
  reject("finetune rejects lr<=0", "/finetune",
         Json{{"pairs", Json::array({Json{{"input", "a"}, {"target", "b"}}})}, {"lr", 0.0}}.dump());

  check("finetune returns the served version", [&]() -> std::optional<std::string> {
    const Json payload{{"pairs", Json::array({ToJson(TrainingPair{kConformancePrompt, kConformanceTarget})})},
                       {"lr", options.learning_rate}};
    const auto a = post("/finetune", payload.dump());
    if (!HasVersion(a)) return Describe(a);
    const auto h = Send(url, "GET", "/health", "", options.timeout_ms);
    if (!HasVersion(h)) return Describe(h);
    if ((*a.body)["version"] != (*h.body)["version"]) return "finetune and health versions differ";
    return std::nullopt;
  });
  check("greedy generate returns the finetuned target", [&]() -> std::optional<std::string> {
    const auto a = generate(1, std::nullopt, 1, 1e-9);
    if (!HasTexts(a, 1)) return Describe(a);
    const auto text = (*a.body)["texts"][0].get<std::string>();
    if (text != kConformanceTarget) return "got '" + text + "'";
    return std::nullopt;
  });
  return report;
}

}  // namespace kgboot
