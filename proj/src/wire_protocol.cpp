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

#include "timewarp/wire_protocol.h"

#include <array>
#include <charconv>
#include <utility>

#include "timewarp/framing.h"

namespace timewarp {

namespace {

using nlohmann::json;

constexpr std::array<std::pair<MessageType, std::string_view>, 14> kTypeNames =
    {{
        {MessageType::kRegister, "REGISTER"},
        {MessageType::kRegisterAck, "REGISTER_ACK"},
        {MessageType::kSeal, "SEAL"},
        {MessageType::kJumpRequest, "JUMP_REQUEST"},
        {MessageType::kJumpWithdraw, "JUMP_WITHDRAW"},
        {MessageType::kJumpAck, "JUMP_ACK"},
        {MessageType::kClockUpdate, "CLOCK_UPDATE"},
        {MessageType::kCollectiveEnter, "COLLECTIVE_ENTER"},
        {MessageType::kCollectiveRelease, "COLLECTIVE_RELEASE"},
        {MessageType::kDeregister, "DEREGISTER"},
        {MessageType::kShutdown, "SHUTDOWN"},
        {MessageType::kError, "ERROR"},
        {MessageType::kDiagnose, "DIAGNOSE"},
        {MessageType::kDiagnostics, "DIAGNOSTICS"},
    }};

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::kMalformedBody, what);
}

const json& field(const json& body, std::string_view name) {
  auto it = body.find(name);
  if (it == body.end()) {
    malformed("missing field '" + std::string(name) + "'");
  }
  return *it;
}

std::string string_field(const json& body, std::string_view name) {
  const json& v = field(body, name);
  if (!v.is_string()) {
    malformed("field '" + std::string(name) + "' must be a string");
  }
  return v.get<std::string>();
}

int64_t int_field(const json& body, std::string_view name) {
  const json& v = field(body, name);
  if (!v.is_number_integer()) {
    malformed("field '" + std::string(name) + "' must be an integer");
  }
  return v.get<int64_t>();
}

uint64_t uint_field(const json& body, std::string_view name) {
  const json& v = field(body, name);
  if (!v.is_number_unsigned() &&
      !(v.is_number_integer() && v.get<int64_t>() >= 0)) {
    malformed("field '" + std::string(name) + "' must be unsigned");
  }
  return v.get<uint64_t>();
}

ClockOffset offset_field(const json& body, std::string_view name) {
  int64_t ns = ns_from_json(field(body, name), name);
  if (ns < 0) {
    malformed("field '" + std::string(name) + "' must be non-negative");
  }
  return ClockOffset(Nanos(ns));
}

VirtualTimestamp ts_field(const json& body, std::string_view name) {
  return VirtualTimestamp(ns_from_json(field(body, name), name));
}

Role role_field(const json& body) {
  std::string name = string_field(body, "role");
  if (name == "ACTOR") return Role::kActor;
  if (name == "OBSERVER") return Role::kObserver;
  malformed("unknown role '" + name + "'");
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

std::string_view to_string(Role role) {
  return role == Role::kActor ? "ACTOR" : "OBSERVER";
}

Role role_from_string(std::string_view name) {
  if (name == "ACTOR") return Role::kActor;
  if (name == "OBSERVER") return Role::kObserver;
  throw Error(ErrorCode::kProtocolError,
              "unknown role '" + std::string(name) + "'");
}

std::string_view to_string(MessageType type) {
  for (const auto& [t, name] : kTypeNames) {
    if (t == type) return name;
  }
  return "UNKNOWN";
}

MessageType type_of(const Message& msg) {
  return std::visit(
      Overloaded{
          [](const RegisterMsg&) { return MessageType::kRegister; },
          [](const RegisterAckMsg&) { return MessageType::kRegisterAck; },
          [](const SealMsg&) { return MessageType::kSeal; },
          [](const JumpRequest&) { return MessageType::kJumpRequest; },
          [](const JumpWithdrawMsg&) { return MessageType::kJumpWithdraw; },
          [](const JumpAckMsg&) { return MessageType::kJumpAck; },
          [](const ClockUpdate&) { return MessageType::kClockUpdate; },
          [](const CollectiveEnterMsg&) {
            return MessageType::kCollectiveEnter;
          },
          [](const CollectiveReleaseMsg&) {
            return MessageType::kCollectiveRelease;
          },
          [](const DeregisterMsg&) { return MessageType::kDeregister; },
          [](const ShutdownMsg&) { return MessageType::kShutdown; },
          [](const ErrorMsg&) { return MessageType::kError; },
          [](const DiagnoseMsg&) { return MessageType::kDiagnose; },
          [](const DiagnosticsMsg&) { return MessageType::kDiagnostics; },
      },
      msg);
}

std::string ns_to_string(int64_t ns) { return std::to_string(ns); }

int64_t ns_from_json(const json& value, std::string_view field_name) {
  if (value.is_number_integer()) {
    return value.get<int64_t>();
  }
  if (!value.is_string()) {
    malformed("field '" + std::string(field_name) +
              "' must be a decimal string");
  }
  const auto& s = value.get_ref<const std::string&>();
  int64_t out = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    malformed("field '" + std::string(field_name) + "' is not an integer: '" +
              s + "'");
  }
  return out;
}

json to_json_body(const Message& msg) {
  json body = json::object();
  body["type"] = std::string(to_string(type_of(msg)));
  std::visit(
      Overloaded{
          [&](const RegisterMsg& m) { body["role"] = to_string(m.role); },
          [&](const RegisterAckMsg& m) {
            body["client_id"] = m.client_id;
            body["role"] = to_string(m.role);
            body["offset"] = ns_to_string(m.offset.ns());
            body["seq"] = m.seq;
          },
          [&](const SealMsg&) {},
          [&](const JumpRequest& m) {
            body["client_id"] = m.client_id;
            body["target"] = ns_to_string(m.target.ns());
          },
          [&](const JumpWithdrawMsg& m) { body["client_id"] = m.client_id; },
          [&](const JumpAckMsg& m) {
            body["client_id"] = m.client_id;
            body["target"] = ns_to_string(m.target.ns());
          },
          [&](const ClockUpdate& m) {
            body["offset"] = ns_to_string(m.offset.ns());
            body["seq"] = m.seq;
          },
          [&](const CollectiveEnterMsg& m) {
            body["client_id"] = m.client_id;
            body["group_id"] = m.group_id;
            body["expected"] = m.expected;
          },
          [&](const CollectiveReleaseMsg& m) {
            body["group_id"] = m.group_id;
            body["generation"] = m.generation;
            body["release_virtual"] = ns_to_string(m.release_virtual.ns());
          },
          [&](const DeregisterMsg& m) { body["client_id"] = m.client_id; },
          [&](const ShutdownMsg&) {},
          [&](const ErrorMsg& m) {
            body["code"] = std::string(to_string(m.code));
            body["detail"] = m.detail;
          },
          [&](const DiagnoseMsg&) {},
          [&](const DiagnosticsMsg& m) { body["body"] = m.body; },
      },
      msg);
  return body;
}

Message from_json_body(const json& body) {
  if (!body.is_object()) {
    malformed("body is not a JSON object");
  }
  const std::string type = string_field(body, "type");
  if (type == "REGISTER") {
    return RegisterMsg{role_field(body)};
  }
  if (type == "REGISTER_ACK") {
    return RegisterAckMsg{string_field(body, "client_id"), role_field(body),
                          offset_field(body, "offset"),
                          uint_field(body, "seq")};
  }
  if (type == "SEAL") {
    return SealMsg{};
  }
  if (type == "JUMP_REQUEST") {
    return JumpRequest{string_field(body, "client_id"),
                       ts_field(body, "target")};
  }
  if (type == "JUMP_WITHDRAW") {
    return JumpWithdrawMsg{string_field(body, "client_id")};
  }
  if (type == "JUMP_ACK") {
    return JumpAckMsg{string_field(body, "client_id"),
                      ts_field(body, "target")};
  }
  if (type == "CLOCK_UPDATE") {
    return ClockUpdate{offset_field(body, "offset"), uint_field(body, "seq")};
  }
  if (type == "COLLECTIVE_ENTER") {
    return CollectiveEnterMsg{string_field(body, "client_id"),
                              string_field(body, "group_id"),
                              int_field(body, "expected")};
  }
  if (type == "COLLECTIVE_RELEASE") {
    return CollectiveReleaseMsg{string_field(body, "group_id"),
                                int_field(body, "generation"),
                                ts_field(body, "release_virtual")};
  }
  if (type == "DEREGISTER") {
    return DeregisterMsg{string_field(body, "client_id")};
  }
  if (type == "SHUTDOWN") {
    return ShutdownMsg{};
  }
  if (type == "ERROR") {
    return ErrorMsg{error_code_from_string(string_field(body, "code")),
                    string_field(body, "detail")};
  }
  if (type == "DIAGNOSE") {
    return DiagnoseMsg{};
  }
  if (type == "DIAGNOSTICS") {
    return DiagnosticsMsg{field(body, "body")};
  }
  malformed("unknown message type '" + type + "'");
}

std::string encode(const Message& msg) {
  return encode_json_frame(to_json_body(msg));
}

Message decode_body(std::string_view body) {
  json parsed = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) {
    malformed("invalid JSON");
  }
  return from_json_body(parsed);
}

Message decode(std::string_view bytes) {
  return decode_body(frame_body(bytes));
}

}  // namespace timewarp
