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

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "timewarp/barrier.h"
#include "timewarp/time_core.h"
#include "timewarp/transport.h"
#include "timewarp/wire_protocol.h"

namespace timewarp {

struct ClientOptions {
  // Missing JUMP_ACK (or any other reply) within this window means the
  // server is gone; surfaced as Error(kDisconnected).
  std::chrono::milliseconds ack_timeout{5000};
  std::chrono::milliseconds connect_timeout{5000};
};

// Actor or observer connection to the Timekeeper. virtual_now() is
// wait-free and callable from any thread; time_jump, collective_barrier,
// park and unpark must be serialized by the caller.
class Client {
 public:
  // Subscribes to the broadcast endpoint first, then registers, so no
  // update can fall between the registration ack and the subscription.
  static std::unique_ptr<Client> connect(const Endpoint& request_endpoint,
                                         const Endpoint& broadcast_endpoint,
                                         Role role, ClientOptions options = {});
  // Endpoints from TIMEKEEPER_REQ_ADDR / TIMEKEEPER_SUB_ADDR.
  static std::unique_ptr<Client> connect_from_env(Role role,
                                                  ClientOptions options = {});

  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  const std::string& id() const { return id_; }
  Role role() const { return role_; }

  VirtualTimestamp virtual_now() const { return clock_.now(); }
  const VirtualClock& clock() const { return clock_; }

  // Advances this actor's virtual time by `delta` (must be > 0). Returns the
  // wall time spent.
  Nanos time_jump(Nanos delta);
  // Same loop with an absolute target; returns at once if already reached.
  Nanos time_jump_until(VirtualTimestamp target);

  // Blocks until every member of `group_id` has entered.
  CollectiveReleaseMsg enter_collective(const std::string& group_id,
                                        int64_t expected);
  // Rendezvous, then every member jumps to release_virtual + duration.
  void collective_barrier(const std::string& group_id, int64_t expected,
                          Nanos duration);

  // Idle actors park: they stay counted at the barrier with an unbounded
  // target that never bounds the minimum and survives resolution rounds.
  void park();
  void unpark();
  bool parked() const { return parked_; }

  // Idempotent. virtual_now keeps working afterwards.
  void deregister();
  bool deregistered() const { return deregistered_; }

  void seal();
  nlohmann::json diagnostics();
  void request_shutdown();

  uint64_t update_sequence() const { return clock_.update_sequence(); }
  // Waits until a clock update newer than `seen_seq` arrives. Returns false
  // on timeout.
  bool wait_for_update_after(uint64_t seen_seq, Nanos timeout);
  // Invoked on the receive thread after each applied broadcast.
  void set_update_listener(std::function<void()> listener);

 private:
  Client(Role role, ClientOptions options);

  Message call(const Message& request,
               std::optional<std::chrono::milliseconds> timeout);
  void require_actor(const char* op) const;
  void receive_loop();
  void on_broadcast(const std::string& body);

  Role role_;
  ClientOptions options_;
  std::string id_;
  VirtualClock clock_;

  Fd request_fd_;
  Fd broadcast_fd_;
  FrameBuffer request_in_;
  FrameBuffer broadcast_in_;
  WakePipe stop_pipe_;
  std::thread receiver_;

  std::mutex call_mu_;
  std::mutex mu_;
  std::condition_variable replies_cv_;
  std::condition_variable update_cv_;
  std::deque<Message> replies_;
  bool disconnected_ = false;
  std::string disconnect_reason_;
  std::function<void()> listener_;

  bool parked_ = false;
  bool deregistered_ = false;
};

}  // namespace timewarp
