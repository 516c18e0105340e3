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
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "timewarp/engine.h"
#include "timewarp/harness.h"
#include "timewarp/transport.h"

namespace timewarp {

// Message bodies exchanged between the dispatcher and the engine over a
// framed stream:
//   {"type": "SUBMIT", "requests": [...], "next_scheduled_ns": "<ns>"|null}
//   {"type": "SUBMIT_ACK", "accepted": n}
//   {"type": "ERROR", "detail": "..."}
// next_scheduled_ns is the planned time of the dispatcher's next
// submission (null after the last one): the engine treats every window that
// starts before it as having complete input.
nlohmann::json make_submit(const std::vector<Submission>& batch,
                           std::optional<VirtualTimestamp> next_scheduled);

// Append-only JSON-lines writer, flushed per batch so a killed process
// leaves every completed step on disk.
class EventLog {
 public:
  explicit EventLog(const std::string& path);
  void append(const std::vector<TokenEvent>& events);
  void flush();
  std::optional<VirtualTimestamp> last_timestamp() const;
  int64_t count() const;

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::optional<VirtualTimestamp> last_;
  int64_t count_ = 0;
};

struct StepTask {
  int64_t step = 0;
  VirtualTimestamp start;
  Nanos stage_duration{0};
  BatchPlan plan;
};

// How an engine turns a planned window into elapsed (virtual) time.
class StepExecutor {
 public:
  virtual ~StepExecutor() = default;
  virtual VirtualTimestamp now() const = 0;
  // Returns once the window [start, start + stages * stage_duration] is
  // over for every worker.
  virtual void run_step(const StepTask& task) = 0;
  virtual void park() {}
  virtual void unpark() {}
  virtual void finish() {}
};

struct EngineRunOptions {
  RunConfig config;
  Endpoint listen;  // dispatcher intake
  std::optional<Endpoint> timekeeper_request;
  std::optional<Endpoint> timekeeper_broadcast;
  std::string out_dir;
};

struct EngineStats {
  int64_t steps = 0;
  int64_t late_windows = 0;  // windows already over when they were planned
  int64_t requests_finished = 0;
  int64_t events = 0;
};

// The engine process body: accepts one dispatcher connection, runs
// iteration-level scheduling until the dispatcher is done and every request
// has finished, then deregisters. Writes events.jsonl and engine_meta.json
// into out_dir.
class EngineRuntime {
 public:
  explicit EngineRuntime(EngineRunOptions options);
  ~EngineRuntime();

  EngineStats run();
  // Flushes the event log; safe from a signal-handling thread.
  void flush();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct DispatcherOptions {
  RunConfig config;
  Endpoint engine;
  std::optional<Endpoint> timekeeper_request;
  std::optional<Endpoint> timekeeper_broadcast;
  std::string out_dir;
};

// Replays the workload against the engine in virtual (or wall) time and
// writes submissions.jsonl and dispatcher_meta.json.
void run_dispatcher(const DispatcherOptions& options);

}  // namespace timewarp
