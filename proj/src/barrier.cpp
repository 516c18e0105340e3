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

#include "timewarp/barrier.h"

#include <algorithm>
#include <thread>

namespace timewarp {

using nlohmann::json;

VirtualTimestamp SystemBarrierClock::wall_now() { return timewarp::wall_now(); }

void SystemBarrierClock::sleep_until(VirtualTimestamp wall) {
  sleep_until_wall(wall);
}

void BarrierOutput::merge(BarrierOutput other) {
  for (auto& b : other.broadcasts) broadcasts.push_back(b);
  for (auto& r : other.releases) releases.push_back(std::move(r));
  for (auto& e : other.errors) errors.push_back(std::move(e));
}

BarrierCore::BarrierCore(BarrierClock& clock, Nanos cooldown,
                         BarrierEventSink* sink)
    : clock_(clock), sink_(sink) {
  state_.cooldown = cooldown;
}

void BarrierCore::log(json event) {
  if (sink_ != nullptr) sink_->record(event);
}

void BarrierCore::add_actor(const std::string& client_id) {
  state_.actors.insert(client_id);
  log({{"ev", "actor"}, {"client", client_id}});
}

BarrierOutput BarrierCore::seal() {
  if (state_.sealed) return {};
  state_.sealed = true;
  log({{"ev", "seal"}, {"num_actors", state_.num_actors()}});
  return try_resolve();
}

BarrierOutput BarrierCore::on_jump_request(const std::string& client_id,
                                           VirtualTimestamp target) {
  if (!state_.actors.contains(client_id)) {
    return BarrierOutput{{}, {}, {{client_id, ErrorCode::kUnknownClient,
                                   "not a registered actor"}}};
  }
  state_.pending[client_id] = target;
  log({{"ev", "request"},
       {"client", client_id},
       {"target", ns_to_string(target.ns())},
       {"wall", ns_to_string(clock_.wall_now().ns())}});
  return try_resolve();
}

BarrierOutput BarrierCore::on_withdraw(const std::string& client_id) {
  state_.pending.erase(client_id);
  log({{"ev", "withdraw"}, {"client", client_id}});
  return {};
}

BarrierOutput BarrierCore::on_deregister(const std::string& client_id) {
  if (!state_.actors.erase(client_id)) {
    return {};
  }
  state_.pending.erase(client_id);
  state_.in_collective.erase(client_id);
  for (auto& [name, group] : state_.collectives) {
    group.arrived.erase(client_id);
  }
  log({{"ev", "deregister"}, {"client", client_id}});
  return try_resolve();
}

BarrierOutput BarrierCore::on_collective_enter(const std::string& client_id,
                                               const std::string& group_id,
                                               int64_t expected) {
  BarrierOutput out;
  if (!state_.actors.contains(client_id)) {
    out.errors.push_back(
        {client_id, ErrorCode::kUnknownClient, "not a registered actor"});
    return out;
  }
  if (expected < 1) {
    out.errors.push_back({client_id, ErrorCode::kExpectedMismatch,
                          "expected member count must be >= 1"});
    return out;
  }
  CollectiveBarrier& group = state_.collectives[group_id];
  group.group_id = group_id;
  if (group.arrived.empty()) {
    group.expected = expected;
  } else if (group.expected != expected) {
    out.errors.push_back(
        {client_id, ErrorCode::kExpectedMismatch,
         "group '" + group_id + "' expects " + std::to_string(group.expected) +
             ", member sent " + std::to_string(expected)});
    return out;
  }
  group.arrived.insert(client_id);
  state_.pending.erase(client_id);
  state_.in_collective.insert(client_id);
  log({{"ev", "collective_enter"},
       {"client", client_id},
       {"group", group_id},
       {"expected", expected}});

  if (static_cast<int64_t>(group.arrived.size()) == group.expected) {
    CollectiveRelease release;
    release.group_id = group_id;
    release.generation = group.generation;
    release.release_virtual = virtual_now();
    release.members.assign(group.arrived.begin(), group.arrived.end());
    for (const auto& m : release.members) state_.in_collective.erase(m);
    group.arrived.clear();
    ++group.generation;
    log({{"ev", "collective_release"},
         {"group", group_id},
         {"generation", release.generation},
         {"members", release.members},
         {"release_virtual", ns_to_string(release.release_virtual.ns())}});
    out.releases.push_back(std::move(release));
    return out;
  }
  out.merge(try_resolve());
  return out;
}

bool BarrierCore::ready() const {
  const int64_t effective = state_.effective_actors();
  return state_.sealed && effective > 0 &&
         static_cast<int64_t>(state_.pending.size()) == effective;
}

BarrierOutput BarrierCore::try_resolve() {
  BarrierOutput out;
  if (auto update = resolve_barrier()) {
    out.broadcasts.push_back(*update);
  }
  return out;
}

std::optional<ClockUpdate> BarrierCore::resolve_barrier() {
  if (!ready()) return std::nullopt;

  VirtualTimestamp t_min = kParkedTarget;
  json pending = json::object();
  for (const auto& [client, target] : state_.pending) {
    t_min = std::min(t_min, target);
    pending[client] = ns_to_string(target.ns());
  }

  std::optional<ClockUpdate> update;
  VirtualTimestamp t_wall = clock_.wall_now();
  if (t_min != kParkedTarget && t_wall < t_min) {
    if (state_.last_broadcast_wall &&
        t_wall < *state_.last_broadcast_wall + state_.cooldown) {
      clock_.sleep_until(*state_.last_broadcast_wall + state_.cooldown);
      t_wall = clock_.wall_now();
    }
    if (t_wall < t_min) {
      state_.offset = std::max(state_.offset, ClockOffset(t_min - t_wall));
      ++state_.seq;
      state_.last_broadcast_wall = t_wall;
      update = ClockUpdate{state_.offset, state_.seq};
    }
  }

  log({{"ev", "resolve"},
       {"t_min", ns_to_string(t_min.ns())},
       {"t_wall", ns_to_string(t_wall.ns())},
       {"pending", std::move(pending)},
       {"broadcast", update.has_value()},
       {"offset", ns_to_string(state_.offset.ns())},
       {"seq", state_.seq}});
  // Parked entries survive the round: an idle actor stays parked until it
  // withdraws or jumps.
  std::erase_if(state_.pending,
                [](const auto& kv) { return kv.second != kParkedTarget; });
  return update;
}

json BarrierCore::diagnostics() const {
  json pending = json::object();
  for (const auto& [client, target] : state_.pending) {
    pending[client] = target == kParkedTarget ? std::string("parked")
                                              : ns_to_string(target.ns());
  }
  json stalled = json::array();
  for (const auto& [name, group] : state_.collectives) {
    if (group.arrived.empty()) continue;
    stalled.push_back({{"group", name},
                       {"generation", group.generation},
                       {"expected", group.expected},
                       {"arrived", group.arrived}});
  }
  json waiting_on = json::array();
  for (const auto& actor : state_.actors) {
    if (!state_.pending.contains(actor) &&
        !state_.in_collective.contains(actor)) {
      waiting_on.push_back(actor);
    }
  }
  return {{"sealed", state_.sealed},
          {"num_actors", state_.num_actors()},
          {"effective_actors", state_.effective_actors()},
          {"pending", std::move(pending)},
          {"waiting_on", std::move(waiting_on)},
          {"stalled_collectives", std::move(stalled)},
          {"offset", ns_to_string(state_.offset.ns())},
          {"seq", state_.seq}};
}

std::string ClientRegistry::register_client(Role role) {
  if (sealed_) {
    throw Error(ErrorCode::kRegistrationSealed,
                "registration is closed for this run");
  }
  std::string id = (role == Role::kActor ? "actor-" : "observer-") +
                   std::to_string(next_id_++);
  clients_[id] = ClientRecord{id, role, true};
  if (role == Role::kActor) ++live_actors_;
  return id;
}

bool ClientRegistry::seal() {
  if (sealed_) return false;
  if (live_actors_ == 0) {
    throw Error(ErrorCode::kNoActors, "cannot seal without actors");
  }
  sealed_ = true;
  return true;
}

ClientRecord ClientRegistry::deregister(const std::string& client_id) {
  auto it = clients_.find(client_id);
  if (it == clients_.end() || !it->second.connected) {
    throw Error(ErrorCode::kUnknownClient, "unknown client " + client_id);
  }
  it->second.connected = false;
  if (it->second.role == Role::kActor) --live_actors_;
  return it->second;
}

const ClientRecord& ClientRegistry::require(
    const std::string& client_id) const {
  auto it = clients_.find(client_id);
  if (it == clients_.end() || !it->second.connected) {
    throw Error(ErrorCode::kUnknownClient, "unknown client " + client_id);
  }
  return it->second;
}

const ClientRecord& ClientRegistry::require_actor(
    const std::string& client_id) const {
  const ClientRecord& rec = require(client_id);
  if (rec.role != Role::kActor) {
    throw Error(ErrorCode::kRoleViolation,
                client_id + " is an observer and cannot request time jumps");
  }
  return rec;
}

}  // namespace timewarp
