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

#include "timewarp/engine_runtime.h"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <exception>
#include <filesystem>
#include <thread>

#include <spdlog/spdlog.h>

#include "timewarp/client.h"
#include "timewarp/device_memory.h"
#include "timewarp/error.h"
#include "timewarp/wire_protocol.h"

namespace timewarp {

using nlohmann::json;

namespace {

constexpr uint64_t kPlanBufferBytes = 1 * kMiB;

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

// One emulated device: a KV pool with no backing and a small host-backed
// buffer through which the worker receives its batch plan.
class WorkerDevice {
 public:
  WorkerDevice(const EngineConfig& config, const RuntimePredictor& predictor,
               const HardwareSpec& hw)
      : config_(config),
        predictor_(predictor),
        hw_(hw),
        memory_(config.device_capacity_bytes,
                config.metadata_threshold_bytes) {
    kv_pool_ = memory_.alloc(static_cast<uint64_t>(config.kv_capacity_blocks) *
                             static_cast<uint64_t>(config.kv_block_tokens) *
                             config.kv_bytes_per_token);
    plan_buffer_ = memory_.alloc(kPlanBufferBytes);
  }

  // Stages the plan through device metadata, re-derives the window length
  // from what was read back and "launches" the KV writes.
  void execute(const StepTask& task) {
    std::string body = json(task.plan).dump();
    if (body.size() + 4 > plan_buffer_.size) {
      throw Error(ErrorCode::kOutOfBounds, "batch plan does not fit the "
                                           "plan buffer");
    }
    uint8_t header[4];
    uint32_t len = static_cast<uint32_t>(body.size());
    for (int i = 0; i < 4; ++i) header[i] = static_cast<uint8_t>(len >> (24 - 8 * i));
    memory_.write(plan_buffer_, 0, header);
    memory_.write(plan_buffer_, 4,
                  {reinterpret_cast<const uint8_t*>(body.data()), body.size()});

    auto raw_len = memory_.read(plan_buffer_, 0, 4);
    uint32_t got = (uint32_t{raw_len[0]} << 24) | (uint32_t{raw_len[1]} << 16) |
                   (uint32_t{raw_len[2]} << 8) | uint32_t{raw_len[3]};
    auto raw = memory_.read(plan_buffer_, 4, got);
    BatchPlan plan = json::parse(raw.begin(), raw.end()).get<BatchPlan>();
    Nanos d = predictor_.predict(plan.composition, hw_);
    if (d != task.stage_duration) {
      throw std::logic_error("worker re-predicted a different window length");
    }

    // KV stores for every token slot the batch touches; the pool is
    // unbacked, so these are accepted and discarded.
    static constexpr uint8_t kMarker[8] = {};
    const uint64_t token_bytes = config_.kv_bytes_per_token;
    const uint64_t pool_tokens = kv_pool_.size / token_bytes;
    const size_t marker = static_cast<size_t>(std::min<uint64_t>(8, token_bytes));
    auto store = [&](int64_t slot) {
      uint64_t off = (static_cast<uint64_t>(slot) % pool_tokens) * token_bytes;
      memory_.write(kv_pool_, off, {kMarker, marker});
    };
    for (const auto& c : plan.composition.prefill_chunks) {
      store(c.context_len_before);
    }
    for (const auto& d : plan.composition.decodes) store(d.context_len);
  }

  DeviceAllocator& memory() { return memory_; }

 private:
  const EngineConfig& config_;
  const RuntimePredictor& predictor_;
  const HardwareSpec& hw_;
  DeviceAllocator memory_;
  BufferHandle kv_pool_;
  BufferHandle plan_buffer_;
};

class SleepExecutor : public StepExecutor {
 public:
  SleepExecutor(const RunConfig& config, const RuntimePredictor& predictor)
      : stages_(config.engine.pp_stages),
        device_(config.engine, predictor, config.hardware) {}

  VirtualTimestamp now() const override { return wall_now(); }

  void run_step(const StepTask& task) override {
    device_.execute(task);
    sleep_until_wall(task.start + task.stage_duration * stages_);
  }

 private:
  int64_t stages_;
  WorkerDevice device_;
};

// W * P worker threads, each an ACTOR with its own device. Tensor-parallel
// peers rendezvous per stage; pipeline stage k+1 waits for stage k through a
// hand-off group; everyone meets at a step-end group so finished stages do
// not hold the barrier.
class TimewarpExecutor : public StepExecutor {
 public:
  TimewarpExecutor(const RunConfig& config, const RuntimePredictor& predictor,
                   const Endpoint& request, const Endpoint& broadcast)
      : width_(config.engine.workers_per_replica),
        stages_(config.engine.pp_stages) {
    for (int64_t stage = 0; stage < stages_; ++stage) {
      for (int64_t rank = 0; rank < width_; ++rank) {
        auto w = std::make_unique<Worker>();
        w->stage = stage;
        w->rank = rank;
        w->client = Client::connect(request, broadcast, Role::kActor);
        w->device = std::make_unique<WorkerDevice>(config.engine, predictor,
                                                   config.hardware);
        workers_.push_back(std::move(w));
      }
    }
    for (auto& w : workers_) {
      w->thread = std::thread([this, raw = w.get()] { worker_loop(*raw); });
    }
  }

  ~TimewarpExecutor() override { stop_threads(); }

  VirtualTimestamp now() const override {
    return workers_.back()->client->virtual_now();
  }

  void run_step(const StepTask& task) override {
    std::unique_lock<std::mutex> lock(mu_);
    task_ = task;
    done_ = 0;
    ++generation_;
    cv_.notify_all();
    done_cv_.wait(lock, [&] {
      return done_ == static_cast<int64_t>(workers_.size()) || error_;
    });
    if (error_) std::rethrow_exception(error_);
  }

  void park() override {
    for (auto& w : workers_) w->client->park();
  }

  void unpark() override {
    for (auto& w : workers_) w->client->unpark();
  }

  void finish() override {
    stop_threads();
    for (auto& w : workers_) w->client->deregister();
  }

 private:
  struct Worker {
    int64_t stage = 0;
    int64_t rank = 0;
    std::unique_ptr<Client> client;
    std::unique_ptr<WorkerDevice> device;
    std::thread thread;
  };

  std::string handoff_group(int64_t from) const {
    return "pp/" + std::to_string(from) + "-" + std::to_string(from + 1);
  }

  void execute(Worker& w, const StepTask& task) {
    w.device->execute(task);
    const VirtualTimestamp target = task.start + task.stage_duration * (w.stage + 1);
    if (width_ == 1 && stages_ == 1) {
      w.client->time_jump_until(target);
      return;
    }
    if (w.stage > 0) w.client->enter_collective(handoff_group(w.stage - 1), 2 * width_);
    if (width_ > 1) {
      w.client->enter_collective("tp/s" + std::to_string(w.stage), width_);
    }
    w.client->time_jump_until(target);
    if (w.stage + 1 < stages_) {
      w.client->enter_collective(handoff_group(w.stage), 2 * width_);
    }
    w.client->enter_collective("step", width_ * stages_);
  }

  void worker_loop(Worker& w) {
    uint64_t seen = 0;
    while (true) {
      StepTask task;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
        if (stopping_) return;
        seen = generation_;
        task = task_;
      }
      try {
        execute(w, task);
        std::lock_guard<std::mutex> lock(mu_);
        ++done_;
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      done_cv_.notify_all();
    }
  }

  void stop_threads() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) {
      if (w->thread.joinable()) w->thread.join();
    }
  }

  int64_t width_;
  int64_t stages_;
  std::vector<std::unique_ptr<Worker>> workers_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  StepTask task_;
  uint64_t generation_ = 0;
  int64_t done_ = 0;
  bool stopping_ = false;
  std::exception_ptr error_;
};

}  // namespace

json make_submit(const std::vector<Submission>& batch,
                 std::optional<VirtualTimestamp> next_scheduled) {
  json requests = json::array();
  for (const auto& s : batch) requests.push_back(submission_to_json(s));
  return {{"type", "SUBMIT"},
          {"requests", std::move(requests)},
          {"next_scheduled_ns", next_scheduled
                                    ? json(ns_to_string(next_scheduled->ns()))
                                    : json(nullptr)}};
}

EventLog::EventLog(const std::string& path) : out_(path) {
  if (!out_) throw Error(ErrorCode::kConfigError, "cannot write " + path);
}

void EventLog::append(const std::vector<TokenEvent>& events) {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& e : events) {
    out_ << token_event_to_json(e).dump() << '\n';
    last_ = std::max(last_.value_or(e.virtual_ts), e.virtual_ts);
    ++count_;
  }
  out_.flush();
}

void EventLog::flush() {
  std::lock_guard<std::mutex> lock(mu_);
  out_.flush();
}

std::optional<VirtualTimestamp> EventLog::last_timestamp() const {
  std::lock_guard<std::mutex> lock(mu_);
  return last_;
}

int64_t EventLog::count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return count_;
}

struct EngineRuntime::Impl {
  explicit Impl(EngineRunOptions o)
      : options(std::move(o)),
        scheduler(options.config.engine),
        predictor(make_predictor(options.config.predictor)),
        log(options.out_dir + "/events.jsonl") {}

  void intake_loop();
  void handle_submit(const json& msg);
  void fail(std::string why);
  void throw_if_failed();
  EngineStats run();

  EngineRunOptions options;
  Scheduler scheduler;
  std::unique_ptr<RuntimePredictor> predictor;
  std::unique_ptr<StepExecutor> executor;
  EventLog log;

  Fd listener;
  WakePipe stop_pipe;
  std::thread intake;

  std::mutex mu;
  std::condition_variable cv;
  VirtualTimestamp next_scheduled{std::numeric_limits<int64_t>::min()};
  bool dispatcher_done = false;
  bool parked = false;
  std::string failure;
};

void EngineRuntime::Impl::fail(std::string why) {
  {
    std::lock_guard<std::mutex> lock(mu);
    if (failure.empty()) failure = std::move(why);
  }
  cv.notify_all();
}

void EngineRuntime::Impl::throw_if_failed() {
  if (!failure.empty()) throw Error(ErrorCode::kProtocolError, failure);
}

void EngineRuntime::Impl::handle_submit(const json& msg) {
  std::optional<VirtualTimestamp> next;
  if (!msg.at("next_scheduled_ns").is_null()) {
    next = VirtualTimestamp(
        ns_from_json(msg.at("next_scheduled_ns"), "next_scheduled_ns"));
  }
  std::lock_guard<std::mutex> lock(mu);
  int64_t added = 0;
  for (const auto& r : msg.at("requests")) {
    Submission s = submission_from_json(r);
    scheduler.submit({s.request_id, s.arrival_virtual, s.scheduled,
                      s.prompt_tokens, s.output_tokens});
    ++added;
  }
  if (next) {
    next_scheduled = *next;
  } else {
    dispatcher_done = true;
    next_scheduled = VirtualTimestamp::max();
  }
  // Unpark before the dispatcher is acknowledged: its next jump must wait
  // for the batch this submission starts.
  if (parked && added > 0) {
    executor->unpark();
    parked = false;
  }
  cv.notify_all();
}

void EngineRuntime::Impl::intake_loop() {
  try {
    pollfd fds[2] = {{stop_pipe.read_fd(), POLLIN, 0},
                     {listener.get(), POLLIN, 0}};
    while (true) {
      if (::poll(fds, 2, -1) < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::kConnectionFailed, "poll failed");
      }
      if (fds[0].revents & POLLIN) return;
      if (fds[1].revents & POLLIN) break;
    }
    FramedConnection conn(Fd(::accept(listener.get(), nullptr, nullptr)));
    if (!conn.valid()) {
      throw Error(ErrorCode::kConnectionFailed, "accept failed");
    }
    while (true) {
      pollfd p[2] = {{stop_pipe.read_fd(), POLLIN, 0},
                     {conn.fd(), POLLIN, 0}};
      if (::poll(p, 2, -1) < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::kConnectionFailed, "poll failed");
      }
      if (p[0].revents & POLLIN) return;
      auto msg = conn.recv_json(std::chrono::milliseconds(0));
      if (!msg) continue;
      const std::string type = msg->value("type", std::string());
      if (type != "SUBMIT") {
        conn.send_json({{"type", "ERROR"}, {"detail", "unexpected " + type}});
        continue;
      }
      try {
        handle_submit(*msg);
      } catch (const std::exception& e) {
        conn.send_json({{"type", "ERROR"}, {"detail", e.what()}});
        throw;
      }
      conn.send_json({{"type", "SUBMIT_ACK"},
                      {"accepted", msg->at("requests").size()}});
      bool done;
      {
        std::lock_guard<std::mutex> lock(mu);
        done = dispatcher_done;
      }
      if (done) return;
    }
  } catch (const std::exception& e) {
    fail(std::string("intake: ") + e.what());
  }
}

EngineStats EngineRuntime::Impl::run() {
  const RunConfig& config = options.config;
  if (config.engine.mode == ExecutionMode::kTimewarp) {
    if (!options.timekeeper_request || !options.timekeeper_broadcast) {
      throw Error(ErrorCode::kConfigError,
                  "timewarp mode needs timekeeper endpoints");
    }
    executor = std::make_unique<TimewarpExecutor>(
        config, *predictor, *options.timekeeper_request,
        *options.timekeeper_broadcast);
  } else {
    executor = std::make_unique<SleepExecutor>(config, *predictor);
  }
  listener = listen_on(options.listen);
  intake = std::thread([this] { intake_loop(); });

  EngineStats stats;
  const int64_t stages = config.engine.pp_stages;
  std::optional<VirtualTimestamp> prev_end;
  std::unique_lock<std::mutex> lock(mu);
  while (true) {
    VirtualTimestamp s;
    if (!scheduler.running().empty()) {
      s = *prev_end;
    } else {
      while (scheduler.queue().empty() && !dispatcher_done && failure.empty()) {
        if (!parked) {
          executor->park();
          parked = true;
        }
        cv.wait(lock);
      }
      throw_if_failed();
      if (scheduler.queue().empty()) break;
      s = *scheduler.earliest_queued();
      if (prev_end) s = std::max(s, *prev_end);
    }
    // Every submission planned at or before s must be in before the batch
    // is formed.
    cv.wait(lock, [&] { return next_scheduled > s || !failure.empty(); });
    throw_if_failed();

    StepTask task;
    task.step = stats.steps;
    task.plan = scheduler.plan_step(s);
    task.stage_duration =
        predictor->predict(task.plan.composition, config.hardware);
    const Nanos window = task.stage_duration * stages;
    task.start = s;
    if (executor->now() >= s + window) {
      task.start = executor->now();
      ++stats.late_windows;
    }
    lock.unlock();
    executor->run_step(task);
    const VirtualTimestamp stamp = executor->now();
    lock.lock();

    const VirtualTimestamp end = task.start + window;
    auto events = scheduler.complete_step(task.plan, end, std::max(stamp, end));
    scheduler.check_invariants();
    log.append(events);
    prev_end = end;
    ++stats.steps;
  }
  lock.unlock();

  stop_pipe.notify();
  if (intake.joinable()) intake.join();
  executor->finish();
  log.flush();

  stats.requests_finished = scheduler.finished();
  stats.events = log.count();
  const VirtualTimestamp end_virtual =
      log.last_timestamp().value_or(executor->now());
  write_json_file(options.out_dir + "/engine_meta.json",
                  {{"mode", to_string(config.engine.mode)},
                   {"end_virtual_ns", ns_to_string(end_virtual.ns())},
                   {"end_wall_ns", ns_to_string(wall_now().ns())},
                   {"steps", stats.steps},
                   {"late_windows", stats.late_windows},
                   {"requests_finished", stats.requests_finished},
                   {"events", stats.events}});
  return stats;
}

EngineRuntime::EngineRuntime(EngineRunOptions options)
    : impl_(std::make_unique<Impl>(std::move(options))) {}

EngineRuntime::~EngineRuntime() {
  impl_->stop_pipe.notify();
  if (impl_->intake.joinable()) impl_->intake.join();
}

EngineStats EngineRuntime::run() { return impl_->run(); }

void EngineRuntime::flush() { impl_->log.flush(); }

void run_dispatcher(const DispatcherOptions& options) {
  const RunConfig& config = options.config;
  const bool timewarp = config.engine.mode == ExecutionMode::kTimewarp;
  std::vector<Arrival> arrivals = generate_arrivals(config.workload);

  std::unique_ptr<Client> client;
  if (timewarp) {
    if (!options.timekeeper_request || !options.timekeeper_broadcast) {
      throw Error(ErrorCode::kConfigError,
                  "timewarp mode needs timekeeper endpoints");
    }
    client = Client::connect(*options.timekeeper_request,
                             *options.timekeeper_broadcast, Role::kActor);
  }
  auto now = [&] { return client ? client->virtual_now() : wall_now(); };

  FramedConnection engine(connect_to(options.engine, std::chrono::seconds(30)));
  const VirtualTimestamp t0 = now();
  write_json_file(options.out_dir + "/dispatcher_meta.json",
                  {{"t0_virtual_ns", ns_to_string(t0.ns())},
                   {"t0_wall_ns", ns_to_string(wall_now().ns())},
                   {"num_requests", arrivals.size()}});
  std::ofstream submissions(options.out_dir + "/submissions.jsonl");

  auto submit = [&](const std::vector<Submission>& batch,
                    std::optional<VirtualTimestamp> next) {
    engine.send_json(make_submit(batch, next));
    auto reply = engine.recv_json(std::chrono::seconds(60));
    if (!reply || reply->value("type", std::string()) != "SUBMIT_ACK") {
      throw Error(ErrorCode::kProtocolError,
                  "engine rejected submission: " +
                      (reply ? reply->dump() : std::string("timeout")));
    }
    for (const auto& s : batch) {
      submissions << submission_to_json(s).dump() << '\n';
    }
    submissions.flush();
  };

  size_t i = 0;
  while (i < arrivals.size()) {
    size_t j = i;
    while (j < arrivals.size() && arrivals[j].offset == arrivals[i].offset) ++j;
    const VirtualTimestamp target = t0 + arrivals[i].offset;
    if (now() < target) {
      if (client) {
        client->time_jump_until(target);
      } else {
        sleep_until_wall(target);
      }
    }
    const VirtualTimestamp stamp = now();
    std::vector<Submission> batch;
    for (size_t k = i; k < j; ++k) {
      batch.push_back({arrivals[k].request_id, stamp, target,
                       arrivals[k].prompt_tokens, arrivals[k].output_tokens});
    }
    std::optional<VirtualTimestamp> next;
    if (j < arrivals.size()) next = t0 + arrivals[j].offset;
    submit(batch, next);
    i = j;
  }
  if (arrivals.empty()) submit({}, std::nullopt);
  if (client) client->deregister();
}

}  // namespace timewarp
