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
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "timewarp/runtime_predictor.h"
#include "timewarp/time_core.h"

namespace timewarp {

enum class SchedulingPolicy { kMixed, kPrefillPrioritized };
enum class ExecutionMode { kTimewarp, kSleep };

const char* to_string(SchedulingPolicy policy);
const char* to_string(ExecutionMode mode);
SchedulingPolicy policy_from_string(const std::string& name);
ExecutionMode mode_from_string(const std::string& name);

struct EngineConfig {
  int64_t chunk_size = 512;
  SchedulingPolicy policy = SchedulingPolicy::kMixed;
  int64_t max_batch_tokens = 512;
  int64_t max_running = 256;
  int64_t kv_block_tokens = 16;
  int64_t kv_capacity_blocks = 8192;
  int64_t workers_per_replica = 1;
  int64_t pp_stages = 1;
  ExecutionMode mode = ExecutionMode::kTimewarp;
  // Device model backing the KV pool.
  uint64_t kv_bytes_per_token = 128 * 1024;
  uint64_t device_capacity_bytes = uint64_t{80} << 30;
  uint64_t metadata_threshold_bytes = uint64_t{4} << 20;

  // Throws Error(kConfigError).
  void validate() const;
  int64_t num_workers() const { return workers_per_replica * pp_stages; }
  // Blocks reserved for a request over its whole lifetime.
  int64_t blocks_for(int64_t prompt_tokens, int64_t output_tokens) const;
};

void to_json(nlohmann::json& j, const EngineConfig& c);
// Missing fields keep their defaults.
void from_json(const nlohmann::json& j, EngineConfig& c);

enum class RequestState { kQueued, kRunning, kFinished };

struct Request {
  std::string request_id;
  // Virtual time at which the dispatcher handed the request over.
  VirtualTimestamp arrival_virtual;
  // Planned arrival; the request may join a batch starting at s only if
  // scheduled <= s.
  VirtualTimestamp scheduled;
  int64_t prompt_tokens = 1;
  int64_t output_tokens = 1;
  int64_t prefill_progress = 0;
  int64_t decoded = 0;
  RequestState state = RequestState::kQueued;

  int64_t prefill_remaining() const { return prompt_tokens - prefill_progress; }
  bool decoding() const {
    return prefill_remaining() == 0 && decoded < output_tokens;
  }
};

struct BatchPlan {
  BatchComposition composition;
  // Blocks newly reserved by this plan's admissions.
  int64_t kv_blocks_needed = 0;
  std::vector<std::string> admitted;

  bool empty() const { return composition.empty(); }
};

void to_json(nlohmann::json& j, const BatchPlan& p);
void from_json(const nlohmann::json& j, BatchPlan& p);

enum class TokenKind { kFirstToken, kOutputToken, kFinished };

const char* to_string(TokenKind kind);
TokenKind token_kind_from_string(const std::string& name);

struct TokenEvent {
  std::string request_id;
  TokenKind kind = TokenKind::kFirstToken;
  VirtualTimestamp virtual_ts;

  bool operator==(const TokenEvent&) const = default;
};

// {"request_id", "kind", "virtual_ts_ns": "<decimal>"}
nlohmann::json token_event_to_json(const TokenEvent& e);
TokenEvent token_event_from_json(const nlohmann::json& j);

// Pure batch formation. `queue` holds only requests eligible for this step
// in FCFS order; `running` holds admitted requests.
BatchPlan form_batch(std::span<const Request> queue,
                     std::span<const Request> running,
                     const EngineConfig& config, int64_t free_kv_blocks);

// Paged KV pool: fixed-size blocks, per-request block tables. Capacity is
// reserved up front at admission and materialized as tokens accumulate.
class KvBlockManager {
 public:
  KvBlockManager(int64_t capacity_blocks, int64_t block_tokens);

  int64_t capacity_blocks() const { return capacity_; }
  int64_t block_tokens() const { return block_tokens_; }
  int64_t reserved_blocks() const { return reserved_total_; }
  int64_t free_blocks() const { return capacity_ - reserved_total_; }
  int64_t live_blocks() const { return capacity_ - free_list_size(); }

  void reserve(const std::string& request_id, int64_t blocks);
  // Ensures the request's block table covers `tokens` tokens.
  void grow(const std::string& request_id, int64_t tokens);
  void release(const std::string& request_id);
  const std::vector<int64_t>& block_table(const std::string& request_id) const;

 private:
  struct Entry {
    int64_t reserved = 0;
    std::vector<int64_t> blocks;
  };

  int64_t free_list_size() const {
    return static_cast<int64_t>(free_list_.size());
  }

  int64_t capacity_;
  int64_t block_tokens_;
  int64_t reserved_total_ = 0;
  std::vector<int64_t> free_list_;
  std::unordered_map<std::string, Entry> entries_;
};

// Per-replica iteration-level scheduler shared by the engine and the
// discrete-event reference.
class Scheduler {
 public:
  explicit Scheduler(EngineConfig config);

  // Throws Error(kConfigError) for requests that could never be admitted.
  void submit(Request request);

  bool idle() const { return queue_.empty() && running_.empty(); }
  // Whether a batch starting at `s` would contain anything.
  bool has_work_at(VirtualTimestamp s) const;
  std::optional<VirtualTimestamp> earliest_queued() const;

  // Forms and admits the batch for a window starting at `s`.
  BatchPlan plan_step(VirtualTimestamp s);
  // Applies a plan whose window ended at `end`; events are stamped `stamp`
  // (defaults to `end`).
  std::vector<TokenEvent> complete_step(
      const BatchPlan& plan, VirtualTimestamp end,
      std::optional<VirtualTimestamp> stamp = std::nullopt);

  // Live KV blocks must equal sum(ceil((prefill + decoded) / block)) over
  // running requests. Throws std::logic_error on violation.
  void check_invariants() const;

  const EngineConfig& config() const { return config_; }
  const KvBlockManager& kv() const { return kv_; }
  const std::vector<Request>& queue() const { return queue_; }
  const std::vector<Request>& running() const { return running_; }
  int64_t finished() const { return finished_; }

 private:
  Request& running_request(const std::string& id);

  EngineConfig config_;
  KvBlockManager kv_;
  std::vector<Request> queue_;
  std::vector<Request> running_;
  int64_t finished_ = 0;
};

}  // namespace timewarp
