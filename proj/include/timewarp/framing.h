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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace timewarp {

// Frame = 4-byte big-endian unsigned body length N, then N body bytes.
inline constexpr size_t kFrameHeaderBytes = 4;
inline constexpr uint32_t kMaxFrameBody = 16u << 20;

std::string make_frame(std::string_view body);

// Total size (header + body) of the frame at the start of `buf`, or nullopt
// if fewer bytes than that are present. Throws Error(kMalformedBody) if the
// announced length exceeds kMaxFrameBody.
std::optional<size_t> complete_frame_size(std::string_view buf);

// Body of the first frame in `buf`. Throws Error(kFrameTooShort) when the
// frame is incomplete.
std::string_view frame_body(std::string_view buf);

std::string encode_json_frame(const nlohmann::json& body);

// Accumulates stream bytes and yields frame bodies in order.
class FrameBuffer {
 public:
  void append(const char* data, size_t len) { buf_.append(data, len); }
  void append(std::string_view data) { buf_.append(data); }

  // Next complete body, consuming it from the buffer.
  std::optional<std::string> next_body();

  size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  size_t pos_ = 0;
};

}  // namespace timewarp
