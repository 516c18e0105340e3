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
#include <optional>
#include <string>
#include <string_view>

#include "timewarp/framing.h"

namespace timewarp {

// "tcp://host:port" or "unix:/path/to/socket".
struct Endpoint {
  enum class Kind { kTcp, kUnix };
  Kind kind = Kind::kTcp;
  std::string host;
  int port = 0;
  std::string path;

  static Endpoint parse(std::string_view text);
  std::string to_string() const;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& other) noexcept : fd_(other.release()) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset(other.release());
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset(int fd = -1);

 private:
  int fd_ = -1;
};

// Binds and listens. A stale unix socket file is removed first.
Fd listen_on(const Endpoint& ep);

// Connects, retrying until `timeout` elapses. Throws
// Error(kConnectionFailed).
Fd connect_to(const Endpoint& ep,
              std::chrono::milliseconds timeout = std::chrono::seconds(5));

void set_nonblocking(int fd);

// Writes the whole buffer on a blocking socket. Throws
// Error(kDisconnected).
void write_all(int fd, std::string_view data);

// Pipe whose read end becomes readable after notify().
class WakePipe {
 public:
  WakePipe();
  int read_fd() const { return read_.get(); }
  void notify();
  void drain();

 private:
  Fd read_;
  Fd write_;
};

// Blocking request/response channel carrying length-prefixed JSON bodies.
class FramedConnection {
 public:
  FramedConnection() = default;
  explicit FramedConnection(Fd fd) : fd_(std::move(fd)) {}

  bool valid() const { return fd_.valid(); }
  int fd() const { return fd_.get(); }

  void send_body(std::string_view body);
  void send_json(const nlohmann::json& body);

  // Waits for the next frame. Returns nullopt on timeout; throws
  // Error(kDisconnected) when the peer closes the stream.
  std::optional<std::string> recv_body(
      std::optional<std::chrono::milliseconds> timeout = std::nullopt);
  std::optional<nlohmann::json> recv_json(
      std::optional<std::chrono::milliseconds> timeout = std::nullopt);

  void close() { fd_.reset(); }

 private:
  Fd fd_;
  FrameBuffer buffer_;
};

}  // namespace timewarp
