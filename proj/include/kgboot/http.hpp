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

// HTTP/JSON wire protocol for backends:
//   POST /generate  GenerationRequest           -> {"texts": [...]}
//   POST /finetune  {"pairs": [...], "lr": x}    -> {"version": "..."}
//   GET  /health                                 -> {"version": "..."}
// Errors answer 4xx/5xx with {"error": "..."}.

#include <httplib.h>

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "kgboot/backend.hpp"
#include "kgboot/error.hpp"
#include "kgboot/io.hpp"

namespace kgboot {

// Backend served by a remote process. Transport failures and 5xx answers
// are retried; 4xx answers are not.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(std::string url, HttpOptions options = {})
      : url_(std::move(url)), options_(options), in_flight_(std::max(1, options.max_in_flight)) {
    if (url_.empty()) throw Error(ErrorCode::kConfig, "http backend: empty url");
    while (!url_.empty() && url_.back() == '/') url_.pop_back();
  }

  GenerationResult Generate(const GenerationRequest& request) const override {
    request.Validate();
    const Json body = Call("POST", "/generate", ToJson(request).dump());
    GenerationResult result;
    if (!body.contains("texts") || !body["texts"].is_array()) {
      throw Error(ErrorCode::kBackend, "http backend: /generate answer lacks 'texts'");
    }
    for (const auto& t : body["texts"]) {
      if (!t.is_string()) throw Error(ErrorCode::kBackend, "http backend: non-string text");
      result.texts.push_back(t.get<std::string>());
    }
    if (static_cast<int>(result.texts.size()) != request.n) {
      throw Error(ErrorCode::kBackend, "http backend: expected " + std::to_string(request.n) +
                                           " texts, got " + std::to_string(result.texts.size()));
    }
    return result;
  }

  std::string Finetune(std::span<const TrainingPair> pairs, double lr) override {
    if (pairs.empty()) throw Error(ErrorCode::kInvalidArgument, "finetune: empty batch");
    Json payload{{"pairs", Json::array()}, {"lr", lr}};
    for (const auto& p : pairs) payload["pairs"].push_back(ToJson(p));
    const Json body = Call("POST", "/finetune", payload.dump());
    return VersionField(body, "/finetune");
  }

  std::string Version() const override { return VersionField(Call("GET", "/health", ""), "/health"); }

  std::unique_ptr<Backend> Clone() const override {
    throw Error(ErrorCode::kBackend, "http backend cannot be cloned; run scratch trials on a local backend");
  }

  const std::string& url() const { return url_; }

 private:
  static std::string VersionField(const Json& body, const char* endpoint) {
    if (!body.contains("version") || !body["version"].is_string()) {
      throw Error(ErrorCode::kBackend, std::string("http backend: ") + endpoint + " answer lacks 'version'");
    }
    return body["version"].get<std::string>();
  }

  Json Call(const std::string& method, const std::string& path, const std::string& payload) const {
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{in_flight_};

    std::string last_error;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(50 << (attempt - 1)));
      httplib::Client client(url_);
      const auto timeout = std::chrono::milliseconds(options_.timeout_ms);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      const auto res = method == "GET" ? client.Get(path)
                                       : client.Post(path, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      Json body;
      try {
        body = Json::parse(res->body);
      } catch (const Json::exception&) {
        last_error = "non-JSON answer (status " + std::to_string(res->status) + ")";
        if (res->status >= 500) continue;
        throw Error(ErrorCode::kBackend, "http backend: " + path + ": " + last_error);
      }
      if (res->status == 200) return body;
      const std::string message = body.is_object() && body.contains("error") && body["error"].is_string()
                                      ? body["error"].get<std::string>()
                                      : res->body;
      last_error = "status " + std::to_string(res->status) + ": " + message;
      if (res->status >= 400 && res->status < 500) {
        throw Error(ErrorCode::kInvalidArgument, "http backend: " + path + ": " + last_error);
      }
    }
    throw Error(ErrorCode::kBackend, "http backend: " + path + " failed after " +
                                         std::to_string(options_.retries + 1) + " attempts: " + last_error);
  }

  std::string url_;
  HttpOptions options_;
  mutable std::counting_semaphore<> in_flight_;
};

// Serves a backend over the wire protocol.
class BackendServer {
 public:
  explicit BackendServer(Backend& backend) : backend_(backend) {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      Respond(res, [&] { return Json{{"version", backend_.Version()}}; });
    });
    server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      Respond(res, [&] {
        const auto request = GenerationRequestFromJson(ParseBody(req.body));
        return Json{{"texts", backend_.Generate(request).texts}};
      });
    });
    server_.Post("/finetune", [this](const httplib::Request& req, httplib::Response& res) {
      Respond(res, [&] {
        const Json j = ParseBody(req.body);
        if (!j.is_object() || !j.contains("pairs") || !j["pairs"].is_array()) {
          throw Error(ErrorCode::kInvalidArgument, "finetune: 'pairs' must be an array");
        }
        if (!j.contains("lr") || !j["lr"].is_number()) {
          throw Error(ErrorCode::kInvalidArgument, "finetune: 'lr' must be a number");
        }
        std::vector<TrainingPair> pairs;
        for (const auto& p : j["pairs"]) pairs.push_back(TrainingPairFromJson(p));
        return Json{{"version", backend_.Finetune(pairs, j["lr"].get<double>())}};
      });
    });
  }

  // Binds to the port (0 picks a free one) and returns the bound port.
  int Bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  // Blocks until Stop().
  void Serve() { server_.listen_after_bind(); }
  void Stop() { server_.stop(); }
  void WaitUntilReady() { server_.wait_until_ready(); }

 private:
  static Json ParseBody(const std::string& body) {
    try {
      return Json::parse(body);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, std::string("invalid JSON body: ") + e.what());
    }
  }

  template <typename F>
  static void Respond(httplib::Response& res, F&& handler) {
    try {
      res.set_content(handler().dump(), "application/json");
      res.status = 200;
    } catch (const Error& e) {
      const bool client_fault = e.code() == ErrorCode::kInvalidArgument;
      res.status = client_fault ? 400 : 500;
      res.set_content(Json{{"error", e.what()}, {"code", ErrorCodeName(e.code())}}.dump(),
                      "application/json");
    }
  }

  Backend& backend_;
  httplib::Server server_;
};

// Runs a server on a background thread for the lifetime of the object.
class BackgroundServer {
 public:
  BackgroundServer(Backend& backend, const std::string& host = "127.0.0.1")
      : server_(backend), port_(server_.Bind(host, 0)), host_(host) {
    thread_ = std::thread([this] { server_.Serve(); });
    server_.WaitUntilReady();
  }
  ~BackgroundServer() {
    server_.Stop();
    if (thread_.joinable()) thread_.join();
  }
  BackgroundServer(const BackgroundServer&) = delete;
  BackgroundServer& operator=(const BackgroundServer&) = delete;

  int port() const { return port_; }
  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

 private:
  BackendServer server_;
  int port_;
  std::string host_;
  std::thread thread_;
};

}  // namespace kgboot
