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

#include <stdexcept>
#include <string>
#include <string_view>

namespace kgboot {

// Machine-readable failure category. The CLI prints the code as a prefix
// ("E_CONFIG: ...") so callers can parse failures without scraping prose.
enum class ErrorCode {
  kInvalidArgument,
  kConfig,
  kDataset,
  kIo,
  kBackend,
  kGeneration,
  kBudget,
  kEmpty,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "E_ARGUMENT";
    case ErrorCode::kConfig: return "E_CONFIG";
    case ErrorCode::kDataset: return "E_DATASET";
    case ErrorCode::kIo: return "E_IO";
    case ErrorCode::kBackend: return "E_BACKEND";
    case ErrorCode::kGeneration: return "E_GENERATION";
    case ErrorCode::kBudget: return "E_BUDGET";
    case ErrorCode::kEmpty: return "E_EMPTY";
  }
  return "E_UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kgboot
