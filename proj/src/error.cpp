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

#include "timewarp/error.h"

#include <array>
#include <utility>

namespace timewarp {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 24> kNames = {{
    {ErrorCode::kRegistrationSealed, "RegistrationSealed"},
    {ErrorCode::kNoActors, "NoActors"},
    {ErrorCode::kUnknownClient, "UnknownClient"},
    {ErrorCode::kRoleViolation, "RoleViolation"},
    {ErrorCode::kExpectedMismatch, "ExpectedMismatch"},
    {ErrorCode::kFrameTooShort, "FrameTooShort"},
    {ErrorCode::kMalformedBody, "MalformedBody"},
    {ErrorCode::kConnectionFailed, "ConnectionFailed"},
    {ErrorCode::kDisconnected, "Disconnected"},
    {ErrorCode::kInvalidDelta, "InvalidDelta"},
    {ErrorCode::kInvalidState, "InvalidState"},
    {ErrorCode::kEmptyBatch, "EmptyBatch"},
    {ErrorCode::kTableMiss, "TableMiss"},
    {ErrorCode::kParseError, "ParseError"},
    {ErrorCode::kNegativeDuration, "NegativeDuration"},
    {ErrorCode::kOutOfDeviceMemory, "OutOfDeviceMemory"},
    {ErrorCode::kOutOfBounds, "OutOfBounds"},
    {ErrorCode::kUseAfterFree, "UseAfterFree"},
    {ErrorCode::kPhantomRead, "PhantomRead"},
    {ErrorCode::kTraceParseError, "TraceParseError"},
    {ErrorCode::kIncompleteLog, "IncompleteLog"},
    {ErrorCode::kWorkloadMismatch, "WorkloadMismatch"},
    {ErrorCode::kConfigError, "ConfigError"},
    {ErrorCode::kProtocolError, "ProtocolError"},
}};

}  // namespace

std::string_view to_string(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) {
      return name;
    }
  }
  return "ProtocolError";
}

ErrorCode error_code_from_string(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) {
      return c;
    }
  }
  return ErrorCode::kProtocolError;
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace timewarp
