// Copyright 2026 The Timewarp Authors. All Rights Reserved.
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

namespace timewarp {

enum class ErrorCode {
  kRegistrationSealed,
  kNoActors,
  kUnknownClient,
  kRoleViolation,
  kExpectedMismatch,
  kFrameTooShort,
  kMalformedBody,
  kConnectionFailed,
  kDisconnected,
  kInvalidDelta,
  kInvalidState,
  kEmptyBatch,
  kTableMiss,
  kParseError,
  kNegativeDuration,
  kOutOfDeviceMemory,
  kOutOfBounds,
  kUseAfterFree,
  kPhantomRead,
  kTraceParseError,
  kIncompleteLog,
  kWorkloadMismatch,
  kConfigError,
  kProtocolError,
};

std::string_view to_string(ErrorCode code);

// Returns kProtocolError for names it does not know.
ErrorCode error_code_from_string(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace timewarp
