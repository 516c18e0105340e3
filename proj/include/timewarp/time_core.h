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

#include <atomic>
#include <chrono>
#include <compare>
#include <cstdint>
#include <limits>
#include <mutex>

namespace timewarp {

using Nanos = std::chrono::nanoseconds;

// A point on the virtual (or wall) timeline, in nanoseconds since the UNIX
// epoch. Virtual and wall readings share this type: virtual = wall + offset.
class VirtualTimestamp {
 public:
  constexpr VirtualTimestamp() = default;
  constexpr explicit VirtualTimestamp(int64_t ns) : ns_(ns) {}

  constexpr int64_t ns() const { return ns_; }

  static constexpr VirtualTimestamp max() {
    return VirtualTimestamp(std::numeric_limits<int64_t>::max());
  }

  friend constexpr auto operator<=>(VirtualTimestamp, VirtualTimestamp) =
      default;

  friend constexpr VirtualTimestamp operator+(VirtualTimestamp t, Nanos d) {
    return VirtualTimestamp(t.ns_ + d.count());
  }
  friend constexpr VirtualTimestamp operator-(VirtualTimestamp t, Nanos d) {
    return VirtualTimestamp(t.ns_ - d.count());
  }
  friend constexpr Nanos operator-(VirtualTimestamp a, VirtualTimestamp b) {
    return Nanos(a.ns_ - b.ns_);
  }

 private:
  int64_t ns_ = 0;
};

// Non-negative distance between virtual time and wall time.
class ClockOffset {
 public:
  constexpr ClockOffset() = default;
  // Throws std::invalid_argument for negative values.
  explicit ClockOffset(Nanos value);

  constexpr Nanos value() const { return value_; }
  constexpr int64_t ns() const { return value_.count(); }

  friend constexpr auto operator<=>(ClockOffset, ClockOffset) = default;

  friend constexpr VirtualTimestamp operator+(VirtualTimestamp t,
                                              ClockOffset o) {
    return t + o.value_;
  }

 private:
  Nanos value_{0};
};

// Host realtime clock. Not guaranteed monotone under NTP slew; callers that
// compare readings should allow ~1ms of backwards motion.
VirtualTimestamp wall_now();

// Sleeps until the realtime clock reaches `wall`, spinning briefly at the
// end to keep overshoot in the single-digit microseconds.
void sleep_until_wall(VirtualTimestamp wall);

// Shrinks the kernel timer slack of the calling thread (and of threads it
// creates afterwards) so timed waits wake close to their deadline.
void reduce_timer_slack();

// Client-side cached clock state. Readers are wait-free; apply_update is
// serialized internally and never lowers the offset.
class VirtualClock {
 public:
  VirtualClock() = default;
  VirtualClock(const VirtualClock&) = delete;
  VirtualClock& operator=(const VirtualClock&) = delete;

  VirtualTimestamp now() const;
  // Same as now() but against a caller-supplied wall reading.
  VirtualTimestamp at_wall(VirtualTimestamp wall) const;

  ClockOffset offset() const;
  uint64_t update_sequence() const;

  // offset := max(offset, new_offset). Updates whose seq is not newer than
  // the last accepted one are ignored. Returns whether the offset changed.
  bool apply_update(ClockOffset new_offset, uint64_t seq);

 private:
  std::atomic<int64_t> offset_ns_{0};
  std::atomic<uint64_t> seq_{0};
  std::mutex update_mu_;
};

inline VirtualTimestamp virtual_now(const VirtualClock& clock) {
  return clock.now();
}

}  // namespace timewarp
