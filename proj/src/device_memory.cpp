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

#include "timewarp/device_memory.h"

#include <stdexcept>
#include <string>

#include "timewarp/error.h"

namespace timewarp {

const char* to_string(BufferClass cls) {
  return cls == BufferClass::kMetadata ? "METADATA" : "COMPUTE";
}

namespace {

std::string describe(const BufferHandle& h) {
  return "buffer #" + std::to_string(h.id) + " (" + to_string(h.cls) + ", " +
         std::to_string(h.size) + " bytes)";
}

}  // namespace

DeviceAllocator::DeviceAllocator(uint64_t capacity, uint64_t threshold)
    : capacity_(capacity), threshold_(threshold) {}

BufferHandle DeviceAllocator::alloc(uint64_t size) {
  if (size == 0) throw std::invalid_argument("allocation size must be > 0");
  if (size > capacity_ - allocated_) {
    throw Error(ErrorCode::kOutOfDeviceMemory,
                "requested " + std::to_string(size) + " bytes with " +
                    std::to_string(capacity_ - allocated_) + " of " +
                    std::to_string(capacity_) + " free");
  }
  Slot slot;
  slot.handle = {next_id_++, size,
                 size < threshold_ ? BufferClass::kMetadata
                                   : BufferClass::kCompute};
  if (slot.handle.cls == BufferClass::kMetadata) slot.backing.resize(size);
  allocated_ += size;
  BufferHandle h = slot.handle;
  live_.emplace(h.id, std::move(slot));
  return h;
}

const DeviceAllocator::Slot& DeviceAllocator::live_slot(
    const BufferHandle& h) const {
  auto it = live_.find(h.id);
  if (it == live_.end()) {
    if (h.id != 0 && h.id < next_id_) {
      throw Error(ErrorCode::kUseAfterFree, describe(h) + " was freed");
    }
    throw Error(ErrorCode::kUseAfterFree, describe(h) + " was never allocated");
  }
  return it->second;
}

void DeviceAllocator::check_range(const BufferHandle& h, uint64_t offset,
                                  uint64_t len) const {
  if (offset >= h.size || len > h.size - offset) {
    throw Error(ErrorCode::kOutOfBounds,
                "[" + std::to_string(offset) + ", +" + std::to_string(len) +
                    ") outside " + describe(h));
  }
}

void DeviceAllocator::write(const BufferHandle& h, uint64_t offset,
                            std::span<const uint8_t> data) {
  const Slot& slot = live_slot(h);
  check_range(slot.handle, offset, data.size());
  if (slot.handle.cls == BufferClass::kCompute) return;
  auto& backing = live_.at(h.id).backing;
  std::copy(data.begin(), data.end(), backing.begin() + offset);
}

std::vector<uint8_t> DeviceAllocator::read(const BufferHandle& h,
                                           uint64_t offset,
                                           uint64_t len) const {
  const Slot& slot = live_slot(h);
  if (slot.handle.cls == BufferClass::kCompute) {
    throw Error(ErrorCode::kPhantomRead,
                "control plane read unbacked " + describe(slot.handle));
  }
  check_range(slot.handle, offset, len);
  return {slot.backing.begin() + offset, slot.backing.begin() + offset + len};
}

void DeviceAllocator::free(const BufferHandle& h) {
  const Slot& slot = live_slot(h);
  allocated_ -= slot.handle.size;
  live_.erase(h.id);
}

bool DeviceAllocator::is_live(const BufferHandle& h) const {
  return live_.contains(h.id);
}

bool DeviceAllocator::is_freed(const BufferHandle& h) const {
  return h.id != 0 && h.id < next_id_ && !live_.contains(h.id);
}

}  // namespace timewarp
