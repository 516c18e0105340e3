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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "timewarp/error.h"
#include "timewarp/time_core.h"
#include "timewarp/wire_protocol.h"

namespace timewarp {

// Target value an idle actor submits while it waits for external input. It
// keeps the actor counted at the barrier without bounding the next advance.
inline constexpr VirtualTimestamp kParkedTarget = VirtualTimestamp::max();

inline constexpr Nanos kDefaultJitterCooldown{500'000};

// Wall-clock source for barrier resolution; tests substitute ManualClock.
class BarrierClock {
 public:
  virtual ~BarrierClock() = default;
  virtual VirtualTimestamp wall_now() = 0;
  virtual void sleep_until(VirtualTimestamp wall) = 0;
};

class SystemBarrierClock final : public BarrierClock {
 public:
  VirtualTimestamp wall_now() override;
  void sleep_until(VirtualTimestamp wall) override;
};

// Deterministic clock. sleep_until jumps straight to the deadline.
class ManualClock final : public BarrierClock {
 public:
  explicit ManualClock(VirtualTimestamp start) : now_(start) {}
  VirtualTimestamp wall_now() override { return now_; }
  void sleep_until(VirtualTimestamp wall) override {
    if (wall > now_) now_ = wall;
  }
  void advance(Nanos d) { now_ = now_ + d; }
  void set(VirtualTimestamp t) { now_ = t; }

 private:
  VirtualTimestamp now_;
};

// Receives one JSON record per barrier event (request log).
class BarrierEventSink {
 public:
  virtual ~BarrierEventSink() = default;
  virtual void record(const nlohmann::json& event) = 0;
};

struct CollectiveBarrier {
  std::string group_id;
  int64_t generation = 0;
  int64_t expected = 0;
  std::set<std::string> arrived;
};

struct BarrierState {
  std::map<std::string, VirtualTimestamp> pending;
  std::set<std::string> actors;
  std::set<std::string> in_collective;
  std::map<std::string, CollectiveBarrier> collectives;
  ClockOffset offset;
  uint64_t seq = 0;
  std::optional<VirtualTimestamp> last_broadcast_wall;
  Nanos cooldown = kDefaultJitterCooldown;
  bool sealed = false;

  int64_t num_actors() const { return static_cast<int64_t>(actors.size()); }
  // Actors blocked in a collective do not take part in time-jump rounds.
  int64_t effective_actors() const {
    return num_actors() - static_cast<int64_t>(in_collective.size());
  }
};

struct CollectiveRelease {
  std::string group_id;
  int64_t generation = 0;
  VirtualTimestamp release_virtual;
  std::vector<std::string> members;
};

struct ClientError {
  std::string client_id;
  ErrorCode code;
  std::string detail;
};

struct BarrierOutput {
  std::vector<ClockUpdate> broadcasts;
  std::vector<CollectiveRelease> releases;
  std::vector<ClientError> errors;

  void merge(BarrierOutput other);
};

// Timekeeper barrier logic. Single-threaded: the server drives it from one
// execution context. Cooldown waits happen inside resolve_barrier via the
// injected clock.
class BarrierCore {
 public:
  BarrierCore(BarrierClock& clock, Nanos cooldown,
              BarrierEventSink* sink = nullptr);

  void add_actor(const std::string& client_id);
  BarrierOutput seal();

  // pending[client] := target, then attempts resolution.
  BarrierOutput on_jump_request(const std::string& client_id,
                                VirtualTimestamp target);
  BarrierOutput on_withdraw(const std::string& client_id);
  BarrierOutput on_deregister(const std::string& client_id);
  BarrierOutput on_collective_enter(const std::string& client_id,
                                    const std::string& group_id,
                                    int64_t expected);

  // Resolves the current round if every participating actor has a pending
  // target. Returns the broadcast, if one was issued.
  std::optional<ClockUpdate> resolve_barrier();

  bool ready() const;
  const BarrierState& state() const { return state_; }
  VirtualTimestamp virtual_now() { return clock_.wall_now() + state_.offset; }

  nlohmann::json diagnostics() const;

 private:
  void log(nlohmann::json event);
  BarrierOutput try_resolve();

  BarrierClock& clock_;
  BarrierEventSink* sink_;
  BarrierState state_;
};

struct ClientRecord {
  std::string client_id;
  Role role = Role::kActor;
  bool connected = true;
};

// Registration bookkeeping used by the server's I/O context.
class ClientRegistry {
 public:
  ClientRegistry() = default;

  // Throws Error(kRegistrationSealed).
  std::string register_client(Role role);
  // Throws Error(kNoActors) when no actor is registered. Returns true only
  // on the first successful call.
  bool seal();
  bool sealed() const { return sealed_; }

  // Throws Error(kUnknownClient) for unknown or already deregistered ids.
  ClientRecord deregister(const std::string& client_id);

  // Throws Error(kUnknownClient) or Error(kRoleViolation).
  const ClientRecord& require_actor(const std::string& client_id) const;
  const ClientRecord& require(const std::string& client_id) const;

  int64_t num_actors() const { return live_actors_; }

 private:
  std::map<std::string, ClientRecord> clients_;
  int64_t next_id_ = 0;
  int64_t live_actors_ = 0;
  bool sealed_ = false;
};

}  // namespace timewarp
