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

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "json.hpp"
#include "timewarp/error.h"
#include "timewarp/time_core.h"

namespace timewarp {

enum class Role { kActor, kObserver };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

enum class MessageType {
  kRegister,
  kRegisterAck,
  kSeal,
  kJumpRequest,
  kJumpWithdraw,
  kJumpAck,
  kClockUpdate,
  kCollectiveEnter,
  kCollectiveRelease,
  kDeregister,
  kShutdown,
  kError,
  kDiagnose,
  kDiagnostics,
};

std::string_view to_string(MessageType type);

// Wire messages. Field names match the JSON body keys.

struct RegisterMsg {
  Role role = Role::kActor;
  bool operator==(const RegisterMsg&) const = default;
};

struct RegisterAckMsg {
  std::string client_id;
  Role role = Role::kActor;
  ClockOffset offset;
  uint64_t seq = 0;
  bool operator==(const RegisterAckMsg&) const = default;
};

// Closes registration. Echoed back by the server as the acknowledgement.
struct SealMsg {
  bool operator==(const SealMsg&) const = default;
};

struct JumpRequest {
  std::string client_id;
  VirtualTimestamp target;
  bool operator==(const JumpRequest&) const = default;
};

// Removes the sender's pending entry without resolving a round. Used by an
// actor leaving the parked state.
struct JumpWithdrawMsg {
  std::string client_id;
  bool operator==(const JumpWithdrawMsg&) const = default;
};

struct JumpAckMsg {
  std::string client_id;
  VirtualTimestamp target;
  bool operator==(const JumpAckMsg&) const = default;
};

struct ClockUpdate {
  ClockOffset offset;
  uint64_t seq = 0;
  bool operator==(const ClockUpdate&) const = default;
};

struct CollectiveEnterMsg {
  std::string client_id;
  std::string group_id;
  int64_t expected = 0;
  bool operator==(const CollectiveEnterMsg&) const = default;
};

struct CollectiveReleaseMsg {
  std::string group_id;
  int64_t generation = 0;
  // Server-side virtual time at the instant the last member arrived.
  VirtualTimestamp release_virtual;
  bool operator==(const CollectiveReleaseMsg&) const = default;
};

// Echoed back by the server as the acknowledgement.
struct DeregisterMsg {
  std::string client_id;
  bool operator==(const DeregisterMsg&) const = default;
};

struct ShutdownMsg {
  bool operator==(const ShutdownMsg&) const = default;
};

struct ErrorMsg {
  ErrorCode code = ErrorCode::kProtocolError;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

struct DiagnoseMsg {
  bool operator==(const DiagnoseMsg&) const = default;
};

struct DiagnosticsMsg {
  nlohmann::json body = nlohmann::json::object();
  bool operator==(const DiagnosticsMsg&) const = default;
};

using Message =
    std::variant<RegisterMsg, RegisterAckMsg, SealMsg, JumpRequest,
                 JumpWithdrawMsg, JumpAckMsg, ClockUpdate, CollectiveEnterMsg,
                 CollectiveReleaseMsg, DeregisterMsg, ShutdownMsg, ErrorMsg,
                 DiagnoseMsg, DiagnosticsMsg>;

MessageType type_of(const Message& msg);

nlohmann::json to_json_body(const Message& msg);

// Throws Error(kMalformedBody) on unknown type or missing/invalid fields.
// Unknown extra fields are ignored.
Message from_json_body(const nlohmann::json& body);

// Full frame: length prefix + JSON body.
std::string encode(const Message& msg);

// Decodes the first frame in `bytes`. Throws Error(kFrameTooShort) if the
// frame is incomplete and Error(kMalformedBody) if its body is invalid.
Message decode(std::string_view bytes);

// Body-only variant for callers that already split the stream into frames.
Message decode_body(std::string_view body);

// 64-bit nanosecond values travel as decimal strings.
std::string ns_to_string(int64_t ns);
int64_t ns_from_json(const nlohmann::json& value, std::string_view field);

}  // namespace timewarp
