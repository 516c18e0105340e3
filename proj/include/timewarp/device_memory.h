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
#include <span>
#include <unordered_map>
#include <vector>

namespace timewarp {

inline constexpr uint64_t kMiB = uint64_t{1} << 20;
inline constexpr uint64_t kGiB = uint64_t{1} << 30;
inline constexpr uint64_t kDefaultMetadataThreshold = 4 * kMiB;

enum class BufferClass { kMetadata, kCompute };

const char* to_string(BufferClass cls);

struct BufferHandle {
  uint64_t id = 0;
  uint64_t size = 0;
  BufferClass cls = BufferClass::kMetadata;
};

// Split-state model of one device's memory. Allocations smaller than the
// threshold get real host backing; larger ones are bookkeeping only, accept
// writes as no-ops and refuse reads with PhantomRead. Not thread-safe: each
// emulated worker owns its allocator.
class DeviceAllocator {
 public:
  explicit DeviceAllocator(uint64_t capacity,
                           uint64_t threshold = kDefaultMetadataThreshold);

  // Throws std::invalid_argument for size 0, Error(kOutOfDeviceMemory) when
  // the allocation does not fit.
  BufferHandle alloc(uint64_t size);
  void write(const BufferHandle& h, uint64_t offset,
             std::span<const uint8_t> data);
  std::vector<uint8_t> read(const BufferHandle& h, uint64_t offset,
                            uint64_t len) const;
  void free(const BufferHandle& h);

  bool is_live(const BufferHandle& h) const;
  bool is_freed(const BufferHandle& h) const;

  uint64_t capacity() const { return capacity_; }
  uint64_t threshold() const { return threshold_; }
  uint64_t allocated() const { return allocated_; }
  size_t live_handles() const { return live_.size(); }

 private:
  struct Slot {
    BufferHandle handle;
    std::vector<uint8_t> backing;  // empty for compute buffers
  };

  const Slot& live_slot(const BufferHandle& h) const;
  void check_range(const BufferHandle& h, uint64_t offset, uint64_t len) const;

  uint64_t capacity_;
  uint64_t threshold_;
  uint64_t allocated_ = 0;
  uint64_t next_id_ = 1;
  std::unordered_map<uint64_t, Slot> live_;
};

}  // namespace timewarp
