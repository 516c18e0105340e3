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

#include "timewarp/timekeeper_server.h"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

namespace timewarp {

namespace {

using nlohmann::json;

class JsonLinesSink final : public BarrierEventSink {
 public:
  explicit JsonLinesSink(const std::string& path) : out_(path) {
    if (!out_) {
      throw Error(ErrorCode::kConfigError, "cannot open log " + path);
    }
  }
  void record(const json& event) override { out_ << event.dump() << '\n'; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

struct BarrierEvent {
  enum class Kind {
    kActor,
    kSeal,
    kJump,
    kWithdraw,
    kDeregister,
    kCollective,
    kDiagnose,
    kStop
  };
  Kind kind;
  std::string client;
  VirtualTimestamp target;
  std::string group;
  int64_t expected = 0;
  uint64_t conn = 0;
};

struct Outgoing {
  enum class Kind { kBroadcast, kToClient, kToConn };
  Kind kind;
  std::string client;
  uint64_t conn = 0;
  std::string frame;
};

struct Conn {
  Fd fd;
  bool subscriber = false;
  FrameBuffer in;
  std::string out;
  std::vector<std::string> clients;
  bool dead = false;
};

}  // namespace

struct TimekeeperServer::Impl {
  explicit Impl(const TimekeeperOptions& o)
      : opts(o), fault_rng(o.fault_seed) {}

  TimekeeperOptions opts;
  Fd req_listener;
  Fd sub_listener;
  WakePipe io_wake;
  std::thread io_thread;
  std::thread barrier_thread;
  std::atomic<bool> stopping{false};
  bool started = false;

  std::mutex done_mu;
  std::condition_variable done_cv;
  bool done = false;

  std::mutex in_mu;
  std::condition_variable in_cv;
  std::deque<BarrierEvent> inbox;

  std::mutex out_mu;
  std::deque<Outgoing> outbox;

  std::mutex snap_mu;
  ClockOffset snap_offset;
  uint64_t snap_seq = 0;

  // Owned by the I/O thread.
  ClientRegistry registry;
  std::map<uint64_t, Conn> conns;
  uint64_t next_conn = 1;
  std::map<std::string, uint64_t> client_conn;
  std::mt19937_64 fault_rng;

  // Owned by the barrier thread.
  SystemBarrierClock clock;
  std::unique_ptr<JsonLinesSink> sink;
  std::unique_ptr<BarrierCore> core;

  void post(BarrierEvent ev) {
    {
      std::lock_guard<std::mutex> lock(in_mu);
      inbox.push_back(std::move(ev));
    }
    in_cv.notify_one();
  }

  void signal_done() {
    {
      std::lock_guard<std::mutex> lock(done_mu);
      done = true;
    }
    done_cv.notify_all();
  }

  // ---- barrier thread ----

  void barrier_loop() {
    while (true) {
      BarrierEvent ev;
      {
        std::unique_lock<std::mutex> lock(in_mu);
        in_cv.wait(lock, [&] { return !inbox.empty(); });
        ev = std::move(inbox.front());
        inbox.pop_front();
      }
      if (ev.kind == BarrierEvent::Kind::kStop) break;

      BarrierOutput out;
      std::vector<Outgoing> sends;
      switch (ev.kind) {
        case BarrierEvent::Kind::kActor:
          core->add_actor(ev.client);
          break;
        case BarrierEvent::Kind::kSeal:
          out = core->seal();
          break;
        case BarrierEvent::Kind::kJump:
          out = core->on_jump_request(ev.client, ev.target);
          break;
        case BarrierEvent::Kind::kWithdraw:
          out = core->on_withdraw(ev.client);
          break;
        case BarrierEvent::Kind::kDeregister:
          out = core->on_deregister(ev.client);
          break;
        case BarrierEvent::Kind::kCollective:
          out = core->on_collective_enter(ev.client, ev.group, ev.expected);
          break;
        case BarrierEvent::Kind::kDiagnose:
          sends.push_back({Outgoing::Kind::kToConn, "", ev.conn,
                           encode(DiagnosticsMsg{core->diagnostics()})});
          break;
        case BarrierEvent::Kind::kStop:
          break;
      }

      {
        std::lock_guard<std::mutex> lock(snap_mu);
        snap_offset = core->state().offset;
        snap_seq = core->state().seq;
      }
      for (const auto& update : out.broadcasts) {
        sends.push_back({Outgoing::Kind::kBroadcast, "", 0, encode(update)});
      }
      for (const auto& release : out.releases) {
        std::string frame = encode(CollectiveReleaseMsg{
            release.group_id, release.generation, release.release_virtual});
        for (const auto& member : release.members) {
          sends.push_back({Outgoing::Kind::kToClient, member, 0, frame});
        }
      }
      for (const auto& err : out.errors) {
        sends.push_back({Outgoing::Kind::kToClient, err.client_id, 0,
                         encode(ErrorMsg{err.code, err.detail})});
      }
      if (!sends.empty()) {
        {
          std::lock_guard<std::mutex> lock(out_mu);
          for (auto& s : sends) outbox.push_back(std::move(s));
        }
        io_wake.notify();
      }
    }
    if (sink) sink->flush();
  }

  // ---- I/O thread ----

  void queue_frame(Conn& conn, const std::string& frame) {
    if (conn.dead) return;
    conn.out += frame;
    flush(conn);
  }

  void flush(Conn& conn) {
    while (!conn.out.empty() && !conn.dead) {
      ssize_t n = ::send(conn.fd.get(), conn.out.data(), conn.out.size(),
                         MSG_NOSIGNAL);
      if (n > 0) {
        conn.out.erase(0, static_cast<size_t>(n));
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
      if (n < 0 && errno == EINTR) continue;
      conn.dead = true;
    }
  }

  void drain_outbox() {
    std::deque<Outgoing> items;
    {
      std::lock_guard<std::mutex> lock(out_mu);
      items.swap(outbox);
    }
    for (auto& item : items) {
      switch (item.kind) {
        case Outgoing::Kind::kBroadcast: {
          if (opts.drop_broadcast_probability > 0.0) {
            std::bernoulli_distribution drop(opts.drop_broadcast_probability);
            if (drop(fault_rng)) continue;
          }
          for (auto& [id, conn] : conns) {
            if (conn.subscriber) queue_frame(conn, item.frame);
          }
          break;
        }
        case Outgoing::Kind::kToClient: {
          auto it = client_conn.find(item.client);
          if (it == client_conn.end()) break;
          auto c = conns.find(it->second);
          if (c != conns.end()) queue_frame(c->second, item.frame);
          break;
        }
        case Outgoing::Kind::kToConn: {
          auto c = conns.find(item.conn);
          if (c != conns.end()) queue_frame(c->second, item.frame);
          break;
        }
      }
    }
  }

  void accept_all(int listener, bool subscriber) {
    while (true) {
      int fd = ::accept4(listener, nullptr, nullptr,
                         SOCK_NONBLOCK | SOCK_CLOEXEC);
      if (fd < 0) return;
      uint64_t id = next_conn++;
      Conn& conn = conns[id];
      conn.fd.reset(fd);
      conn.subscriber = subscriber;
      if (subscriber) {
        // Current state first, so a subscriber that waits for this frame
        // cannot miss any later broadcast.
        ClockUpdate snapshot;
        {
          std::lock_guard<std::mutex> lock(snap_mu);
          snapshot = ClockUpdate{snap_offset, snap_seq};
        }
        queue_frame(conn, encode(snapshot));
      }
    }
  }

  void reply(Conn& conn, const Message& msg) { queue_frame(conn, encode(msg)); }

  void handle(uint64_t conn_id, Conn& conn, const Message& msg) {
    try {
      if (auto* m = std::get_if<RegisterMsg>(&msg)) {
        std::string id = registry.register_client(m->role);
        client_conn[id] = conn_id;
        conn.clients.push_back(id);
        if (m->role == Role::kActor) {
          post({BarrierEvent::Kind::kActor, id});
        }
        RegisterAckMsg ack{id, m->role, {}, 0};
        {
          std::lock_guard<std::mutex> lock(snap_mu);
          ack.offset = snap_offset;
          ack.seq = snap_seq;
        }
        reply(conn, ack);
        if (opts.expect_actors &&
            registry.num_actors() >= *opts.expect_actors && registry.seal()) {
          post({BarrierEvent::Kind::kSeal});
        }
      } else if (std::holds_alternative<SealMsg>(msg)) {
        if (registry.seal()) post({BarrierEvent::Kind::kSeal});
        reply(conn, SealMsg{});
      } else if (auto* m = std::get_if<JumpRequest>(&msg)) {
        registry.require_actor(m->client_id);
        post({BarrierEvent::Kind::kJump, m->client_id, m->target});
        reply(conn, JumpAckMsg{m->client_id, m->target});
      } else if (auto* m = std::get_if<JumpWithdrawMsg>(&msg)) {
        registry.require_actor(m->client_id);
        post({BarrierEvent::Kind::kWithdraw, m->client_id});
        reply(conn, JumpAckMsg{m->client_id, VirtualTimestamp(0)});
      } else if (auto* m = std::get_if<CollectiveEnterMsg>(&msg)) {
        registry.require_actor(m->client_id);
        post({BarrierEvent::Kind::kCollective, m->client_id, {}, m->group_id,
              m->expected});
      } else if (auto* m = std::get_if<DeregisterMsg>(&msg)) {
        ClientRecord rec = registry.deregister(m->client_id);
        if (rec.role == Role::kActor) {
          post({BarrierEvent::Kind::kDeregister, m->client_id});
        }
        reply(conn, DeregisterMsg{m->client_id});
        client_conn.erase(m->client_id);
        std::erase(conn.clients, m->client_id);
      } else if (std::holds_alternative<DiagnoseMsg>(msg)) {
        BarrierEvent ev{BarrierEvent::Kind::kDiagnose};
        ev.conn = conn_id;
        post(std::move(ev));
      } else if (std::holds_alternative<ShutdownMsg>(msg)) {
        reply(conn, ShutdownMsg{});
        signal_done();
      } else {
        throw Error(ErrorCode::kProtocolError,
                    "unexpected " + std::string(to_string(type_of(msg))) +
                        " on request channel");
      }
    } catch (const Error& e) {
      reply(conn, ErrorMsg{e.code(), e.detail()});
    }
  }

  void read_conn(uint64_t id, Conn& conn) {
    char buf[65536];
    while (true) {
      ssize_t n = ::recv(conn.fd.get(), buf, sizeof(buf), 0);
      if (n > 0) {
        conn.in.append(buf, static_cast<size_t>(n));
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
      if (n < 0 && errno == EINTR) continue;
      conn.dead = true;
      break;
    }
    if (conn.subscriber) return;
    try {
      while (auto body = conn.in.next_body()) {
        handle(id, conn, decode_body(*body));
      }
    } catch (const Error& e) {
      // Malformed input is connection-fatal.
      spdlog::warn("timekeeper: dropping connection: {}", e.what());
      reply(conn, ErrorMsg{e.code(), e.detail()});
      conn.dead = true;
    }
  }

  void reap(uint64_t id, Conn& conn) {
    for (const auto& client : conn.clients) {
      try {
        ClientRecord rec = registry.deregister(client);
        if (rec.role == Role::kActor) {
          post({BarrierEvent::Kind::kDeregister, client});
        }
      } catch (const Error&) {
      }
      client_conn.erase(client);
    }
    conns.erase(id);
  }

  void io_loop() {
    std::vector<pollfd> fds;
    std::vector<uint64_t> ids;
    while (!stopping.load()) {
      fds.clear();
      ids.clear();
      fds.push_back({io_wake.read_fd(), POLLIN, 0});
      fds.push_back({req_listener.get(), POLLIN, 0});
      fds.push_back({sub_listener.get(), POLLIN, 0});
      for (auto& [id, conn] : conns) {
        short events = POLLIN;
        if (!conn.out.empty()) events |= POLLOUT;
        fds.push_back({conn.fd.get(), events, 0});
        ids.push_back(id);
      }
      int rc = ::poll(fds.data(), fds.size(), 200);
      if (rc < 0 && errno != EINTR) break;
      if (fds[0].revents & POLLIN) io_wake.drain();
      drain_outbox();
      if (fds[1].revents & POLLIN) accept_all(req_listener.get(), false);
      if (fds[2].revents & POLLIN) accept_all(sub_listener.get(), true);
      for (size_t i = 3; i < fds.size(); ++i) {
        auto it = conns.find(ids[i - 3]);
        if (it == conns.end()) continue;
        Conn& conn = it->second;
        if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
          read_conn(it->first, conn);
        }
        if (fds[i].revents & POLLOUT) flush(conn);
      }
      for (auto it = conns.begin(); it != conns.end();) {
        auto next = std::next(it);
        if (it->second.dead) reap(it->first, it->second);
        it = next;
      }
    }
    // Best-effort flush of pending replies (e.g. the SHUTDOWN echo).
    drain_outbox();
    for (auto& [id, conn] : conns) flush(conn);
  }
};

TimekeeperServer::TimekeeperServer(TimekeeperOptions options)
    : options_(std::move(options)),
      impl_(std::make_unique<Impl>(options_)) {}

TimekeeperServer::~TimekeeperServer() { stop(); }

void TimekeeperServer::start() {
  Impl& s = *impl_;
  if (!options_.log_path.empty()) {
    s.sink = std::make_unique<JsonLinesSink>(options_.log_path);
  }
  s.core = std::make_unique<BarrierCore>(s.clock, options_.jitter_cooldown,
                                         s.sink.get());
  s.req_listener = listen_on(options_.request_endpoint);
  s.sub_listener = listen_on(options_.broadcast_endpoint);
  set_nonblocking(s.req_listener.get());
  set_nonblocking(s.sub_listener.get());
  s.started = true;
  s.barrier_thread = std::thread([&s] { s.barrier_loop(); });
  s.io_thread = std::thread([&s] { s.io_loop(); });
}

void TimekeeperServer::stop() {
  Impl& s = *impl_;
  if (!s.started) return;
  s.started = false;
  s.stopping.store(true);
  s.io_wake.notify();
  if (s.io_thread.joinable()) s.io_thread.join();
  s.post({BarrierEvent::Kind::kStop});
  if (s.barrier_thread.joinable()) s.barrier_thread.join();
  s.conns.clear();
  s.req_listener.reset();
  s.sub_listener.reset();
  for (const Endpoint* ep :
       {&options_.request_endpoint, &options_.broadcast_endpoint}) {
    if (ep->kind == Endpoint::Kind::kUnix) ::unlink(ep->path.c_str());
  }
  s.signal_done();
}

void TimekeeperServer::wait() {
  Impl& s = *impl_;
  std::unique_lock<std::mutex> lock(s.done_mu);
  s.done_cv.wait(lock, [&] { return s.done; });
}

}  // namespace timewarp
