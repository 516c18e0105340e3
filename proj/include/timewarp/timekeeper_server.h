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
#include <memory>
#include <optional>
#include <string>

#include "timewarp/barrier.h"
#include "timewarp/transport.h"

namespace timewarp {

struct TimekeeperOptions {
  Endpoint request_endpoint;
  Endpoint broadcast_endpoint;
  Nanos jitter_cooldown = kDefaultJitterCooldown;
  // JSON-lines barrier event log; empty disables it.
  std::string log_path;
  // Seal automatically once this many actors have registered.
  std::optional<int64_t> expect_actors;
  // Fault injection: probability of dropping each CLOCK_UPDATE broadcast.
  double drop_broadcast_probability = 0.0;
  uint64_t fault_seed = 1;
};

// The Timekeeper service. One thread owns the sockets (framing, acks,
// registration); a second owns BarrierCore. Jump requests are acknowledged
// by the I/O thread as soon as they are queued for the barrier thread, so
// cooldown waits never stall intake.
class TimekeeperServer {
 public:
  explicit TimekeeperServer(TimekeeperOptions options);
  ~TimekeeperServer();

  TimekeeperServer(const TimekeeperServer&) = delete;
  TimekeeperServer& operator=(const TimekeeperServer&) = delete;

  // Binds both endpoints and starts serving. Throws on bind failure.
  void start();
  // Stops both threads and flushes the log. Idempotent.
  void stop();
  // Blocks until a SHUTDOWN message arrives or stop() is called.
  void wait();

  const TimekeeperOptions& options() const { return options_; }

 private:
  struct Impl;
  TimekeeperOptions options_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace timewarp
