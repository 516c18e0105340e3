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

#include "timewarp/client.h"

#include <poll.h>
#include <sys/socket.h>

#include <cerrno>
#include <cstdlib>

namespace timewarp {

namespace {

template <class T>
T expect_reply(Message msg, const char* what) {
  if (auto* m = std::get_if<T>(&msg)) return std::move(*m);
  throw Error(ErrorCode::kProtocolError,
              std::string("unexpected ") +
                  std::string(to_string(type_of(msg))) + " in reply to " +
                  what);
}

// Reads one frame body from a blocking socket before the receive thread
// exists.
std::string read_first_body(int fd, FrameBuffer& buf,
                            std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (auto body = buf.next_body()) return *body;
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      throw Error(ErrorCode::kConnectionFailed,
                  "no initial clock state from broadcast endpoint");
    }
    pollfd p{fd, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) continue;
    char chunk[4096];
    ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n <= 0) {
      throw Error(ErrorCode::kConnectionFailed,
                  "broadcast endpoint closed during subscribe");
    }
    buf.append(chunk, static_cast<size_t>(n));
  }
}

}  // namespace

Client::Client(Role role, ClientOptions options)
    : role_(role), options_(options) {}

std::unique_ptr<Client> Client::connect(const Endpoint& request_endpoint,
                                        const Endpoint& broadcast_endpoint,
                                        Role role, ClientOptions options) {
  std::unique_ptr<Client> c(new Client(role, options));
  c->broadcast_fd_ = connect_to(broadcast_endpoint, options.connect_timeout);
  c->on_broadcast(read_first_body(c->broadcast_fd_.get(), c->broadcast_in_,
                                  options.connect_timeout));
  c->request_fd_ = connect_to(request_endpoint, options.connect_timeout);
  c->receiver_ = std::thread([raw = c.get()] { raw->receive_loop(); });

  auto ack = expect_reply<RegisterAckMsg>(
      c->call(RegisterMsg{role}, options.ack_timeout), "REGISTER");
  c->id_ = ack.client_id;
  c->clock_.apply_update(ack.offset, ack.seq);
  return c;
}

std::unique_ptr<Client> Client::connect_from_env(Role role,
                                                 ClientOptions options) {
  const char* req = std::getenv("TIMEKEEPER_REQ_ADDR");
  const char* sub = std::getenv("TIMEKEEPER_SUB_ADDR");
  if (req == nullptr || sub == nullptr) {
    throw Error(ErrorCode::kConnectionFailed,
                "TIMEKEEPER_REQ_ADDR and TIMEKEEPER_SUB_ADDR must be set");
  }
  return connect(Endpoint::parse(req), Endpoint::parse(sub), role, options);
}

Client::~Client() {
  stop_pipe_.notify();
  if (receiver_.joinable()) receiver_.join();
}

void Client::set_update_listener(std::function<void()> listener) {
  std::lock_guard<std::mutex> lock(mu_);
  listener_ = std::move(listener);
}

void Client::on_broadcast(const std::string& body) {
  Message msg = decode_body(body);
  auto* update = std::get_if<ClockUpdate>(&msg);
  if (update == nullptr) {
    throw Error(ErrorCode::kProtocolError,
                "unexpected " + std::string(to_string(type_of(msg))) +
                    " on broadcast channel");
  }
  clock_.apply_update(update->offset, update->seq);
  std::function<void()> listener;
  {
    std::lock_guard<std::mutex> lock(mu_);
    listener = listener_;
  }
  update_cv_.notify_all();
  if (listener) listener();
}

void Client::receive_loop() {
  auto fail = [this](std::string reason) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      disconnected_ = true;
      disconnect_reason_ = std::move(reason);
    }
    replies_cv_.notify_all();
    update_cv_.notify_all();
  };
  char chunk[65536];
  while (true) {
    pollfd fds[3] = {{stop_pipe_.read_fd(), POLLIN, 0},
                     {request_fd_.get(), POLLIN, 0},
                     {broadcast_fd_.get(), POLLIN, 0}};
    int rc = ::poll(fds, 3, -1);
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail("poll failed");
      return;
    }
    if (fds[0].revents & POLLIN) return;
    try {
      if (fds[2].revents & (POLLIN | POLLHUP | POLLERR)) {
        ssize_t n = ::recv(broadcast_fd_.get(), chunk, sizeof(chunk), 0);
        if (n <= 0) {
          fail("broadcast channel closed");
          return;
        }
        broadcast_in_.append(chunk, static_cast<size_t>(n));
        while (auto body = broadcast_in_.next_body()) on_broadcast(*body);
      }
      if (fds[1].revents & (POLLIN | POLLHUP | POLLERR)) {
        ssize_t n = ::recv(request_fd_.get(), chunk, sizeof(chunk), 0);
        if (n <= 0) {
          fail("request channel closed");
          return;
        }
        request_in_.append(chunk, static_cast<size_t>(n));
        while (auto body = request_in_.next_body()) {
          Message msg = decode_body(*body);
          {
            std::lock_guard<std::mutex> lock(mu_);
            replies_.push_back(std::move(msg));
          }
          replies_cv_.notify_all();
        }
      }
    } catch (const Error& e) {
      fail(e.what());
      return;
    }
  }
}

Message Client::call(const Message& request,
                     std::optional<std::chrono::milliseconds> timeout) {
  std::lock_guard<std::mutex> call_lock(call_mu_);
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (disconnected_) {
      throw Error(ErrorCode::kDisconnected, disconnect_reason_);
    }
  }
  write_all(request_fd_.get(), encode(request));
  std::unique_lock<std::mutex> lock(mu_);
  auto ready = [&] { return !replies_.empty() || disconnected_; };
  if (timeout) {
    if (!replies_cv_.wait_for(lock, *timeout, ready)) {
      throw Error(ErrorCode::kDisconnected,
                  "no reply to " + std::string(to_string(type_of(request))) +
                      " within " + std::to_string(timeout->count()) + "ms");
    }
  } else {
    replies_cv_.wait(lock, ready);
  }
  if (replies_.empty()) {
    throw Error(ErrorCode::kDisconnected, disconnect_reason_);
  }
  Message reply = std::move(replies_.front());
  replies_.pop_front();
  if (auto* err = std::get_if<ErrorMsg>(&reply)) {
    throw Error(err->code, err->detail);
  }
  return reply;
}

void Client::require_actor(const char* op) const {
  if (role_ != Role::kActor) {
    throw Error(ErrorCode::kRoleViolation,
                std::string(op) + " requires the ACTOR role");
  }
  if (deregistered_) {
    throw Error(ErrorCode::kInvalidState,
                std::string(op) + " after deregister");
  }
}

bool Client::wait_for_update_after(uint64_t seen_seq, Nanos timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  bool got = update_cv_.wait_for(lock, timeout, [&] {
    return clock_.update_sequence() > seen_seq || disconnected_;
  });
  if (disconnected_) {
    throw Error(ErrorCode::kDisconnected, disconnect_reason_);
  }
  return got;
}

Nanos Client::time_jump(Nanos delta) {
  if (delta.count() <= 0) {
    throw Error(ErrorCode::kInvalidDelta,
                "time jump delta must be positive, got " +
                    std::to_string(delta.count()) + "ns");
  }
  require_actor("time_jump");
  return time_jump_until(clock_.now() + delta);
}

Nanos Client::time_jump_until(VirtualTimestamp target) {
  require_actor("time_jump");
  auto start = std::chrono::steady_clock::now();
  while (clock_.now() < target) {
    const uint64_t seen = clock_.update_sequence();
    expect_reply<JumpAckMsg>(
        call(JumpRequest{id_, target}, options_.ack_timeout), "JUMP_REQUEST");
    parked_ = false;
    Nanos remaining = target - clock_.now();
    if (remaining.count() > 0) {
      // Either a broadcast arrives or wall time covers the rest by itself.
      wait_for_update_after(seen, remaining);
    }
  }
  return std::chrono::duration_cast<Nanos>(std::chrono::steady_clock::now() -
                                           start);
}

CollectiveReleaseMsg Client::enter_collective(const std::string& group_id,
                                              int64_t expected) {
  require_actor("collective_barrier");
  parked_ = false;
  return expect_reply<CollectiveReleaseMsg>(
      call(CollectiveEnterMsg{id_, group_id, expected}, std::nullopt),
      "COLLECTIVE_ENTER");
}

void Client::collective_barrier(const std::string& group_id, int64_t expected,
                                Nanos duration) {
  CollectiveReleaseMsg release = enter_collective(group_id, expected);
  if (duration.count() > 0) {
    time_jump_until(release.release_virtual + duration);
  }
}

void Client::park() {
  require_actor("park");
  expect_reply<JumpAckMsg>(
      call(JumpRequest{id_, kParkedTarget}, options_.ack_timeout), "park");
  parked_ = true;
}

void Client::unpark() {
  require_actor("unpark");
  expect_reply<JumpAckMsg>(call(JumpWithdrawMsg{id_}, options_.ack_timeout),
                           "JUMP_WITHDRAW");
  parked_ = false;
}

void Client::deregister() {
  if (deregistered_) return;
  deregistered_ = true;
  parked_ = false;
  expect_reply<DeregisterMsg>(
      call(DeregisterMsg{id_}, options_.ack_timeout), "DEREGISTER");
}

void Client::seal() {
  expect_reply<SealMsg>(call(SealMsg{}, options_.ack_timeout), "SEAL");
}

nlohmann::json Client::diagnostics() {
  return expect_reply<DiagnosticsMsg>(
             call(DiagnoseMsg{}, options_.ack_timeout), "DIAGNOSE")
      .body;
}

void Client::request_shutdown() {
  expect_reply<ShutdownMsg>(call(ShutdownMsg{}, options_.ack_timeout),
                            "SHUTDOWN");
}

}  // namespace timewarp
