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

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <random>
#include <thread>

#include <gtest/gtest.h>

namespace timewarp {
namespace {

using std::chrono::milliseconds;
using std::chrono::seconds;

TEST(WallNowTest, ConsecutiveReadsDoNotGoBackwardsBeyondSlew) {
  VirtualTimestamp a = wall_now();
  VirtualTimestamp b = wall_now();
  EXPECT_GE(b, a - milliseconds(1));
  EXPECT_GT(a.ns(), 0);
}

TEST(WallNowTest, LaterReadsStayAfterRunEpoch) {
  const VirtualTimestamp epoch = wall_now();
  for (int i = 0; i < 1000; ++i) {
    EXPECT_GE(wall_now(), epoch - milliseconds(1));
  }
}

TEST(WallNowTest, TwoProcessesAgreeWithinASecond) {
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    int64_t t = wall_now().ns();
    (void)!::write(fds[1], &t, sizeof(t));
    ::_exit(0);
  }
  int64_t child = 0;
  ASSERT_EQ(::read(fds[0], &child, sizeof(child)),
            static_cast<ssize_t>(sizeof(child)));
  int64_t parent = wall_now().ns();
  ::waitpid(pid, nullptr, 0);
  ::close(fds[0]);
  ::close(fds[1]);
  EXPECT_LT(std::abs(parent - child), Nanos(seconds(1)).count());
}

TEST(ClockOffsetTest, RejectsNegative) {
  EXPECT_THROW(ClockOffset(Nanos(-1)), std::invalid_argument);
  EXPECT_EQ(ClockOffset(Nanos(0)).ns(), 0);
  EXPECT_EQ(ClockOffset().ns(), 0);
}

TEST(VirtualTimestampTest, ArithmeticIsExactAtExtremes) {
  VirtualTimestamp t(std::numeric_limits<int64_t>::max() - 5);
  EXPECT_EQ((t - Nanos(10)).ns(), std::numeric_limits<int64_t>::max() - 15);
  EXPECT_EQ((t - VirtualTimestamp(0)).count(), t.ns());
  EXPECT_EQ(VirtualTimestamp(7) + ClockOffset(Nanos(3)), VirtualTimestamp(10));
}

TEST(VirtualClockTest, InitialOffsetIsZeroSoVirtualEqualsWall) {
  VirtualClock clock;
  EXPECT_EQ(clock.offset().ns(), 0);
  EXPECT_EQ(clock.update_sequence(), 0u);
  VirtualTimestamp wall(1'000'000'000);
  EXPECT_EQ(clock.at_wall(wall), wall);
  Nanos diff = virtual_now(clock) - wall_now();
  EXPECT_LT(std::abs(diff.count()), Nanos(milliseconds(5)).count());
}

TEST(VirtualClockTest, OffsetAddsToWall) {
  VirtualClock clock;
  ASSERT_TRUE(clock.apply_update(ClockOffset(milliseconds(10)), 1));
  VirtualTimestamp wall(5'000'000'000);
  EXPECT_EQ(clock.at_wall(wall), wall + milliseconds(10));
}

TEST(VirtualClockTest, LargerOffsetWinsOverLaterSmallerOne) {
  VirtualClock clock;
  clock.apply_update(ClockOffset(milliseconds(5)), 1);
  EXPECT_FALSE(clock.apply_update(ClockOffset(milliseconds(3)), 2));
  EXPECT_EQ(clock.offset().value(), milliseconds(5));
}

TEST(VirtualClockTest, ApplyUpdateExamples) {
  VirtualClock clock;
  EXPECT_TRUE(clock.apply_update(ClockOffset(milliseconds(20)), 1));
  EXPECT_EQ(clock.offset().value(), milliseconds(20));
  EXPECT_FALSE(clock.apply_update(ClockOffset(milliseconds(15)), 2));
  EXPECT_EQ(clock.offset().value(), milliseconds(20));
  // Duplicate delivery of an already applied update.
  EXPECT_FALSE(clock.apply_update(ClockOffset(milliseconds(20)), 2));
  EXPECT_EQ(clock.update_sequence(), 2u);
}

TEST(VirtualClockTest, StaleSequenceIsIgnoredEvenWithLargerOffset) {
  VirtualClock clock;
  clock.apply_update(ClockOffset(milliseconds(1)), 5);
  EXPECT_FALSE(clock.apply_update(ClockOffset(milliseconds(9)), 4));
  EXPECT_EQ(clock.offset().value(), milliseconds(1));
  EXPECT_EQ(clock.update_sequence(), 5u);
}

TEST(VirtualClockTest, UpdateMakesVirtualNowJumpBySameAmount) {
  VirtualClock clock;
  VirtualTimestamp wall(42);
  VirtualTimestamp before = clock.at_wall(wall);
  clock.apply_update(ClockOffset(seconds(1)), 1);
  EXPECT_EQ(clock.at_wall(wall) - before, Nanos(seconds(1)));
}

TEST(VirtualClockTest, OffsetIsRunningMaximumOfAppliedUpdates) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    VirtualClock clock;
    int64_t running_max = 0;
    uint64_t seq = 0;
    for (int i = 0; i < 50; ++i) {
      int64_t off = static_cast<int64_t>(rng() % 1'000'000'000);
      seq += 1 + rng() % 3;
      clock.apply_update(ClockOffset(Nanos(off)), seq);
      running_max = std::max(running_max, off);
      ASSERT_EQ(clock.offset().ns(), running_max);
    }
  }
}

TEST(VirtualClockTest, TwoClocksDifferExactlyByOffsetAtSameWallInstant) {
  VirtualClock a, b;
  a.apply_update(ClockOffset(Nanos(123)), 1);
  b.apply_update(ClockOffset(Nanos(1'000'123)), 1);
  VirtualTimestamp wall = wall_now();
  EXPECT_EQ(b.at_wall(wall) - a.at_wall(wall), Nanos(1'000'000));
}

TEST(VirtualClockTest, ReadersNeverObserveDecreaseUnderConcurrentUpdates) {
  VirtualClock clock;
  std::atomic<bool> stop{false};
  std::thread writer([&] {
    uint64_t seq = 0;
    std::mt19937_64 rng(3);
    while (!stop.load()) {
      int64_t off = static_cast<int64_t>(rng() % 10'000'000'000ull);
      clock.apply_update(ClockOffset(Nanos(off)), ++seq);
    }
  });
  int64_t last_offset = 0;
  VirtualTimestamp last_now = clock.now();
  for (int i = 0; i < 100'000; ++i) {
    int64_t off = clock.offset().ns();
    ASSERT_GE(off, last_offset);
    last_offset = off;
    VirtualTimestamp now = clock.now();
    ASSERT_GE(now, last_now - milliseconds(1));
    last_now = now;
  }
  stop = true;
  writer.join();
}

TEST(SleepUntilWallTest, WakesCloseToDeadline) {
  reduce_timer_slack();
  for (int i = 0; i < 5; ++i) {
    VirtualTimestamp deadline = wall_now() + milliseconds(3);
    sleep_until_wall(deadline);
    Nanos late = wall_now() - deadline;
    EXPECT_GE(late.count(), 0);
    EXPECT_LT(late, milliseconds(2));
  }
}

}  // namespace
}  // namespace timewarp
