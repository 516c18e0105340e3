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

#include "timewarp/transport.h"

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "timewarp/error.h"

namespace timewarp {

namespace {

std::string errno_text() { return std::strerror(errno); }

sockaddr_un unix_address(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) {
    throw Error(ErrorCode::kConfigError, "unix socket path too long: " + path);
  }
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  std::string port = std::to_string(ep.port);
  int rc = getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(),
                       port.c_str(), &hints, &res);
  if (rc != 0) {
    throw Error(ErrorCode::kConnectionFailed,
                "cannot resolve " + ep.to_string() + ": " + gai_strerror(rc));
  }
  return res;
}

void tune_tcp(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  Endpoint ep;
  if (text.starts_with("unix:")) {
    ep.kind = Kind::kUnix;
    ep.path = std::string(text.substr(5));
    if (ep.path.starts_with("//")) ep.path = ep.path.substr(2);
    if (ep.path.empty()) {
      throw Error(ErrorCode::kConfigError, "empty unix socket path");
    }
    return ep;
  }
  std::string_view rest = text;
  if (rest.starts_with("tcp://")) rest.remove_prefix(6);
  auto colon = rest.rfind(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::kConfigError,
                "endpoint needs host:port: " + std::string(text));
  }
  ep.kind = Kind::kTcp;
  ep.host = std::string(rest.substr(0, colon));
  try {
    ep.port = std::stoi(std::string(rest.substr(colon + 1)));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kConfigError, "bad port in " + std::string(text));
  }
  return ep;
}

std::string Endpoint::to_string() const {
  if (kind == Kind::kUnix) return "unix:" + path;
  return "tcp://" + host + ":" + std::to_string(port);
}

void Fd::reset(int fd) {
  if (fd_ >= 0) ::close(fd_);
  fd_ = fd;
}

Fd listen_on(const Endpoint& ep) {
  if (ep.kind == Endpoint::Kind::kUnix) {
    Fd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd.valid()) {
      throw Error(ErrorCode::kConnectionFailed, "socket: " + errno_text());
    }
    ::unlink(ep.path.c_str());
    sockaddr_un addr = unix_address(ep.path);
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) !=
            0 ||
        ::listen(fd.get(), 128) != 0) {
      throw Error(ErrorCode::kConnectionFailed,
                  "listen on " + ep.to_string() + ": " + errno_text());
    }
    return fd;
  }
  addrinfo* res = resolve(ep, true);
  Fd fd(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC,
                 res->ai_protocol));
  int one = 1;
  setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  int rc = ::bind(fd.get(), res->ai_addr, res->ai_addrlen);
  freeaddrinfo(res);
  if (rc != 0 || ::listen(fd.get(), 128) != 0) {
    throw Error(ErrorCode::kConnectionFailed,
                "listen on " + ep.to_string() + ": " + errno_text());
  }
  return fd;
}

Fd connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string last_error;
  while (true) {
    if (ep.kind == Endpoint::Kind::kUnix) {
      Fd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
      sockaddr_un addr = unix_address(ep.path);
      if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr),
                    sizeof(addr)) == 0) {
        return fd;
      }
      last_error = errno_text();
    } else {
      addrinfo* res = resolve(ep, false);
      Fd fd(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC,
                     res->ai_protocol));
      int rc = ::connect(fd.get(), res->ai_addr, res->ai_addrlen);
      freeaddrinfo(res);
      if (rc == 0) {
        tune_tcp(fd.get());
        return fd;
      }
      last_error = errno_text();
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw Error(ErrorCode::kConnectionFailed,
                  "connect to " + ep.to_string() + ": " + last_error);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      throw Error(ErrorCode::kDisconnected, "send: " + errno_text());
    }
    data.remove_prefix(static_cast<size_t>(n));
  }
}

WakePipe::WakePipe() {
  int fds[2];
  if (::pipe2(fds, O_NONBLOCK | O_CLOEXEC) != 0) {
    throw Error(ErrorCode::kConnectionFailed, "pipe: " + errno_text());
  }
  read_.reset(fds[0]);
  write_.reset(fds[1]);
}

void WakePipe::notify() {
  char b = 1;
  [[maybe_unused]] auto n = ::write(write_.get(), &b, 1);
}

void WakePipe::drain() {
  char buf[256];
  while (::read(read_.get(), buf, sizeof(buf)) > 0) {
  }
}

void FramedConnection::send_body(std::string_view body) {
  write_all(fd_.get(), make_frame(body));
}

void FramedConnection::send_json(const nlohmann::json& body) {
  send_body(body.dump());
}

std::optional<std::string> FramedConnection::recv_body(
    std::optional<std::chrono::milliseconds> timeout) {
  auto deadline = timeout ? std::chrono::steady_clock::now() + *timeout
                          : std::chrono::steady_clock::time_point::max();
  while (true) {
    if (auto body = buffer_.next_body()) {
      return body;
    }
    int wait_ms = -1;
    if (timeout) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      wait_ms = static_cast<int>(std::max<int64_t>(left.count(), 0));
    }
    pollfd p{fd_.get(), POLLIN, 0};
    int rc = ::poll(&p, 1, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kDisconnected, "poll: " + errno_text());
    }
    if (rc == 0) {
      if (timeout && std::chrono::steady_clock::now() >= deadline) {
        return std::nullopt;
      }
      continue;
    }
    char buf[65536];
    ssize_t n = ::recv(fd_.get(), buf, sizeof(buf), 0);
    if (n == 0) {
      throw Error(ErrorCode::kDisconnected, "peer closed connection");
    }
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(ErrorCode::kDisconnected, "recv: " + errno_text());
    }
    buffer_.append(buf, static_cast<size_t>(n));
  }
}

std::optional<nlohmann::json> FramedConnection::recv_json(
    std::optional<std::chrono::milliseconds> timeout) {
  auto body = recv_body(timeout);
  if (!body) return std::nullopt;
  auto parsed = nlohmann::json::parse(*body, nullptr, false);
  if (parsed.is_discarded()) {
    throw Error(ErrorCode::kMalformedBody, "invalid JSON frame");
  }
  return parsed;
}

}  // namespace timewarp
