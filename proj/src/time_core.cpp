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

#include "timewarp/time_core.h"

#include <sys/prctl.h>

#include <stdexcept>
#include <thread>

namespace timewarp {

ClockOffset::ClockOffset(Nanos value) : value_(value) {
  if (value.count() < 0) {
    throw std::invalid_argument("clock offset must be non-negative");
  }
}

VirtualTimestamp wall_now() {
  auto since_epoch = std::chrono::system_clock::now().time_since_epoch();
  return VirtualTimestamp(
      std::chrono::duration_cast<Nanos>(since_epoch).count());
}

void sleep_until_wall(VirtualTimestamp wall) {
  // Coarse sleep, then yield through the last stretch: plain sleeps
  // overshoot by tens of microseconds.
  constexpr Nanos kSpinWindow{30'000};
  while (true) {
    Nanos left = wall - wall_now();
    if (left.count() <= 0) return;
    if (left > kSpinWindow) {
      std::this_thread::sleep_for(left - kSpinWindow);
    } else {
      std::this_thread::yield();
    }
  }
}

void reduce_timer_slack() { ::prctl(PR_SET_TIMERSLACK, 1UL, 0, 0, 0); }

VirtualTimestamp VirtualClock::now() const { return at_wall(wall_now()); }

VirtualTimestamp VirtualClock::at_wall(VirtualTimestamp wall) const {
  return wall + Nanos(offset_ns_.load(std::memory_order_acquire));
}

ClockOffset VirtualClock::offset() const {
  return ClockOffset(Nanos(offset_ns_.load(std::memory_order_acquire)));
}

uint64_t VirtualClock::update_sequence() const {
  return seq_.load(std::memory_order_acquire);
}

bool VirtualClock::apply_update(ClockOffset new_offset, uint64_t seq) {
  std::lock_guard<std::mutex> lock(update_mu_);
  if (seq <= seq_.load(std::memory_order_relaxed)) {
    return false;
  }
  bool changed = false;
  if (new_offset.ns() > offset_ns_.load(std::memory_order_relaxed)) {
    offset_ns_.store(new_offset.ns(), std::memory_order_release);
    changed = true;
  }
  seq_.store(seq, std::memory_order_release);
  return changed;
}

}  // namespace timewarp
