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

#include "timewarp/framing.h"

#include "timewarp/error.h"

namespace timewarp {

std::string make_frame(std::string_view body) {
  const auto n = static_cast<uint32_t>(body.size());
  std::string out;
  out.reserve(kFrameHeaderBytes + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

std::optional<size_t> complete_frame_size(std::string_view buf) {
  if (buf.size() < kFrameHeaderBytes) {
    return std::nullopt;
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const uint32_t n = (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) |
                     (uint32_t{p[2]} << 8) | uint32_t{p[3]};
  if (n > kMaxFrameBody) {
    throw Error(ErrorCode::kMalformedBody,
                "frame length " + std::to_string(n) + " exceeds limit");
  }
  if (buf.size() < kFrameHeaderBytes + n) {
    return std::nullopt;
  }
  return kFrameHeaderBytes + n;
}

std::string_view frame_body(std::string_view buf) {
  auto size = complete_frame_size(buf);
  if (!size) {
    throw Error(ErrorCode::kFrameTooShort,
                "have " + std::to_string(buf.size()) + " bytes");
  }
  return buf.substr(kFrameHeaderBytes, *size - kFrameHeaderBytes);
}

std::string encode_json_frame(const nlohmann::json& body) {
  return make_frame(body.dump());
}

std::optional<std::string> FrameBuffer::next_body() {
  std::string_view rest(buf_.data() + pos_, buf_.size() - pos_);
  auto size = complete_frame_size(rest);
  if (!size) {
    if (pos_ > 0 && pos_ * 2 > buf_.size()) {
      buf_.erase(0, pos_);
      pos_ = 0;
    }
    return std::nullopt;
  }
  std::string body(rest.substr(kFrameHeaderBytes, *size - kFrameHeaderBytes));
  pos_ += *size;
  if (pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  return body;
}

}  // namespace timewarp
