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

#include "timewarp/engine.h"

#include <algorithm>
#include <stdexcept>

#include "timewarp/error.h"
#include "timewarp/wire_protocol.h"

namespace timewarp {

using nlohmann::json;

const char* to_string(SchedulingPolicy policy) {
  return policy == SchedulingPolicy::kMixed ? "MIXED" : "PREFILL_PRIORITIZED";
}

const char* to_string(ExecutionMode mode) {
  return mode == ExecutionMode::kTimewarp ? "TIMEWARP" : "SLEEP";
}

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(c));
  return s;
}

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

}  // namespace

SchedulingPolicy policy_from_string(const std::string& name) {
  std::string n = upper(name);
  if (n == "MIXED") return SchedulingPolicy::kMixed;
  if (n == "PREFILL_PRIORITIZED") return SchedulingPolicy::kPrefillPrioritized;
  throw Error(ErrorCode::kConfigError, "unknown policy '" + name + "'");
}

ExecutionMode mode_from_string(const std::string& name) {
  std::string n = upper(name);
  if (n == "TIMEWARP") return ExecutionMode::kTimewarp;
  if (n == "SLEEP") return ExecutionMode::kSleep;
  throw Error(ErrorCode::kConfigError, "unknown mode '" + name + "'");
}

void EngineConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kConfigError, what);
  };
  require(chunk_size >= 1, "chunk_size must be >= 1");
  require(max_batch_tokens >= chunk_size,
          "max_batch_tokens must be >= chunk_size");
  require(max_running >= 1, "max_running must be >= 1");
  require(kv_block_tokens >= 1, "kv_block_tokens must be >= 1");
  require(kv_capacity_blocks >= 1, "kv_capacity_blocks must be >= 1");
  require(workers_per_replica >= 1, "workers_per_replica must be >= 1");
  require(pp_stages >= 1, "pp_stages must be >= 1");
  require(kv_bytes_per_token >= 1, "kv_bytes_per_token must be >= 1");
}

int64_t EngineConfig::blocks_for(int64_t prompt_tokens,
                                 int64_t output_tokens) const {
  return ceil_div(prompt_tokens + output_tokens, kv_block_tokens);
}

void to_json(json& j, const EngineConfig& c) {
  j = {{"chunk_size", c.chunk_size},
       {"policy", to_string(c.policy)},
       {"max_batch_tokens", c.max_batch_tokens},
       {"max_running", c.max_running},
       {"kv_block_tokens", c.kv_block_tokens},
       {"kv_capacity_blocks", c.kv_capacity_blocks},
       {"workers_per_replica", c.workers_per_replica},
       {"pp_stages", c.pp_stages},
       {"mode", to_string(c.mode)},
       {"kv_bytes_per_token", c.kv_bytes_per_token},
       {"device_capacity_bytes", c.device_capacity_bytes},
       {"metadata_threshold_bytes", c.metadata_threshold_bytes}};
}

void from_json(const json& j, EngineConfig& c) {
  c = EngineConfig{};
  c.chunk_size = j.value("chunk_size", c.chunk_size);
  if (j.contains("policy")) c.policy = policy_from_string(j.at("policy"));
  c.max_batch_tokens = j.value("max_batch_tokens", c.chunk_size);
  c.max_running = j.value("max_running", c.max_running);
  c.kv_block_tokens = j.value("kv_block_tokens", c.kv_block_tokens);
  c.kv_capacity_blocks = j.value("kv_capacity_blocks", c.kv_capacity_blocks);
  c.workers_per_replica = j.value("workers_per_replica", c.workers_per_replica);
  c.pp_stages = j.value("pp_stages", c.pp_stages);
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode"));
  c.kv_bytes_per_token = j.value("kv_bytes_per_token", c.kv_bytes_per_token);
  c.device_capacity_bytes =
      j.value("device_capacity_bytes", c.device_capacity_bytes);
  c.metadata_threshold_bytes =
      j.value("metadata_threshold_bytes", c.metadata_threshold_bytes);
}

void to_json(json& j, const BatchPlan& p) {
  j = {{"composition", p.composition},
       {"kv_blocks_needed", p.kv_blocks_needed},
       {"admitted", p.admitted}};
}

void from_json(const json& j, BatchPlan& p) {
  p.composition = j.at("composition").get<BatchComposition>();
  p.kv_blocks_needed = j.at("kv_blocks_needed").get<int64_t>();
  p.admitted = j.at("admitted").get<std::vector<std::string>>();
}

const char* to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::kFirstToken:
      return "FIRST_TOKEN";
    case TokenKind::kOutputToken:
      return "OUTPUT_TOKEN";
    case TokenKind::kFinished:
      return "FINISHED";
  }
  return "?";
}

TokenKind token_kind_from_string(const std::string& name) {
  if (name == "FIRST_TOKEN") return TokenKind::kFirstToken;
  if (name == "OUTPUT_TOKEN") return TokenKind::kOutputToken;
  if (name == "FINISHED") return TokenKind::kFinished;
  throw Error(ErrorCode::kParseError, "unknown token event kind '" + name + "'");
}

json token_event_to_json(const TokenEvent& e) {
  return {{"request_id", e.request_id},
          {"kind", to_string(e.kind)},
          {"virtual_ts_ns", ns_to_string(e.virtual_ts.ns())}};
}

TokenEvent token_event_from_json(const json& j) {
  return {j.at("request_id").get<std::string>(),
          token_kind_from_string(j.at("kind").get<std::string>()),
          VirtualTimestamp(ns_from_json(j.at("virtual_ts_ns"), "virtual_ts_ns"))};
}

BatchPlan form_batch(std::span<const Request> queue,
                     std::span<const Request> running,
                     const EngineConfig& config, int64_t free_kv_blocks) {
  BatchPlan plan;
  auto& chunks = plan.composition.prefill_chunks;
  auto& decodes = plan.composition.decodes;
  int64_t budget = config.max_batch_tokens;
  int64_t free_blocks = free_kv_blocks;
  int64_t running_count = static_cast<int64_t>(running.size());

  auto head_admittable = [&] {
    return !queue.empty() && running_count < config.max_running &&
           config.blocks_for(queue.front().prompt_tokens,
                             queue.front().output_tokens) <= free_blocks;
  };

  auto add_decodes = [&] {
    for (const Request& r : running) {
      if (budget == 0) break;
      if (!r.decoding()) continue;
      decodes.push_back({r.request_id, r.prompt_tokens + r.decoded});
      --budget;
    }
  };

  auto add_prefills = [&] {
    for (const Request& r : running) {
      if (budget == 0) break;
      if (r.prefill_remaining() <= 0) continue;
      int64_t c = std::min({config.chunk_size, r.prefill_remaining(), budget});
      chunks.push_back({r.request_id, c, r.prefill_progress});
      budget -= c;
    }
    // FCFS: a request that does not fit blocks those behind it.
    for (const Request& q : queue) {
      if (budget == 0 || running_count >= config.max_running) break;
      int64_t need = config.blocks_for(q.prompt_tokens, q.output_tokens);
      if (need > free_blocks) break;
      free_blocks -= need;
      ++running_count;
      int64_t c = std::min({config.chunk_size, q.prompt_tokens, budget});
      chunks.push_back({q.request_id, c, 0});
      budget -= c;
      plan.admitted.push_back(q.request_id);
      plan.kv_blocks_needed += need;
    }
  };

  if (config.policy == SchedulingPolicy::kMixed) {
    add_decodes();
    add_prefills();
  } else {
    bool prefill_pending =
        head_admittable() ||
        std::any_of(running.begin(), running.end(), [](const Request& r) {
          return r.prefill_remaining() > 0;
        });
    if (prefill_pending) {
      add_prefills();
    } else {
      add_decodes();
    }
  }
  return plan;
}

KvBlockManager::KvBlockManager(int64_t capacity_blocks, int64_t block_tokens)
    : capacity_(capacity_blocks), block_tokens_(block_tokens) {
  free_list_.reserve(static_cast<size_t>(capacity_blocks));
  for (int64_t b = capacity_blocks - 1; b >= 0; --b) free_list_.push_back(b);
}

void KvBlockManager::reserve(const std::string& request_id, int64_t blocks) {
  if (entries_.contains(request_id)) {
    throw std::logic_error("duplicate KV reservation for " + request_id);
  }
  if (blocks > free_blocks()) {
    throw std::logic_error("KV reservation exceeds free blocks");
  }
  entries_[request_id].reserved = blocks;
  reserved_total_ += blocks;
}

void KvBlockManager::grow(const std::string& request_id, int64_t tokens) {
  Entry& e = entries_.at(request_id);
  int64_t want = ceil_div(tokens, block_tokens_);
  if (want > e.reserved) {
    throw std::logic_error("request " + request_id +
                           " outgrew its KV reservation");
  }
  while (static_cast<int64_t>(e.blocks.size()) < want) {
    e.blocks.push_back(free_list_.back());
    free_list_.pop_back();
  }
}

void KvBlockManager::release(const std::string& request_id) {
  auto it = entries_.find(request_id);
  if (it == entries_.end()) return;
  for (int64_t b : it->second.blocks) free_list_.push_back(b);
  reserved_total_ -= it->second.reserved;
  entries_.erase(it);
}

const std::vector<int64_t>& KvBlockManager::block_table(
    const std::string& request_id) const {
  return entries_.at(request_id).blocks;
}

Scheduler::Scheduler(EngineConfig config)
    : config_(config), kv_(config.kv_capacity_blocks, config.kv_block_tokens) {
  config_.validate();
}

void Scheduler::submit(Request request) {
  if (request.prompt_tokens < 1 || request.output_tokens < 1) {
    throw Error(ErrorCode::kConfigError,
                "request " + request.request_id +
                    " needs prompt_tokens >= 1 and output_tokens >= 1");
  }
  if (config_.blocks_for(request.prompt_tokens, request.output_tokens) >
      kv_.capacity_blocks()) {
    throw Error(ErrorCode::kConfigError,
                "request " + request.request_id +
                    " can never fit in the KV pool");
  }
  request.state = RequestState::kQueued;
  request.prefill_progress = 0;
  request.decoded = 0;
  queue_.push_back(std::move(request));
}

bool Scheduler::has_work_at(VirtualTimestamp s) const {
  return !running_.empty() ||
         (!queue_.empty() && queue_.front().scheduled <= s);
}

std::optional<VirtualTimestamp> Scheduler::earliest_queued() const {
  if (queue_.empty()) return std::nullopt;
  return queue_.front().scheduled;
}

BatchPlan Scheduler::plan_step(VirtualTimestamp s) {
  auto eligible_end = std::find_if(
      queue_.begin(), queue_.end(),
      [s](const Request& r) { return r.scheduled > s; });
  std::span<const Request> eligible(queue_.data(),
                                    static_cast<size_t>(eligible_end -
                                                        queue_.begin()));
  BatchPlan plan = form_batch(eligible, running_, config_, kv_.free_blocks());
  // Admissions are always a prefix of the eligible queue.
  for (size_t i = 0; i < plan.admitted.size(); ++i) {
    Request r = std::move(queue_[i]);
    r.state = RequestState::kRunning;
    kv_.reserve(r.request_id,
                config_.blocks_for(r.prompt_tokens, r.output_tokens));
    running_.push_back(std::move(r));
  }
  queue_.erase(queue_.begin(),
               queue_.begin() + static_cast<long>(plan.admitted.size()));
  return plan;
}

Request& Scheduler::running_request(const std::string& id) {
  for (auto& r : running_) {
    if (r.request_id == id) return r;
  }
  throw std::logic_error("plan references unknown request " + id);
}

std::vector<TokenEvent> Scheduler::complete_step(
    const BatchPlan& plan, VirtualTimestamp end,
    std::optional<VirtualTimestamp> stamp) {
  const VirtualTimestamp ts = stamp.value_or(end);
  std::vector<TokenEvent> events;
  auto finish_if_done = [&](Request& r) {
    if (r.decoded == r.output_tokens) {
      r.state = RequestState::kFinished;
      events.push_back({r.request_id, TokenKind::kFinished, ts});
    }
  };
  for (const auto& d : plan.composition.decodes) {
    Request& r = running_request(d.request_id);
    ++r.decoded;
    kv_.grow(r.request_id, r.prefill_progress + r.decoded);
    events.push_back({r.request_id, TokenKind::kOutputToken, ts});
    finish_if_done(r);
  }
  for (const auto& c : plan.composition.prefill_chunks) {
    Request& r = running_request(c.request_id);
    r.prefill_progress += c.chunk_tokens;
    if (r.prefill_remaining() == 0) {
      r.decoded = 1;
      events.push_back({r.request_id, TokenKind::kFirstToken, ts});
      finish_if_done(r);
    }
    kv_.grow(r.request_id, r.prefill_progress + r.decoded);
  }
  std::erase_if(running_, [&](const Request& r) {
    if (r.state != RequestState::kFinished) return false;
    kv_.release(r.request_id);
    ++finished_;
    return true;
  });
  return events;
}

void Scheduler::check_invariants() const {
  int64_t expected = 0;
  for (const auto& r : running_) {
    expected += ceil_div(r.prefill_progress + r.decoded, config_.kv_block_tokens);
    if (r.prefill_progress > r.prompt_tokens || r.decoded > r.output_tokens) {
      throw std::logic_error("request " + r.request_id + " overran its budget");
    }
  }
  if (expected != kv_.live_blocks()) {
    throw std::logic_error("KV accounting drift: " +
                           std::to_string(kv_.live_blocks()) + " live vs " +
                           std::to_string(expected) + " expected");
  }
  if (kv_.reserved_blocks() > kv_.capacity_blocks()) {
    throw std::logic_error("KV reservations exceed capacity");
  }
}

}  // namespace timewarp
