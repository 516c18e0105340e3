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

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "timewarp/error.h"

namespace timewarp {
namespace {

using std::chrono::milliseconds;

constexpr VirtualTimestamp kT0(1'000'000'000'000);

Request make_request(const std::string& id, int64_t prompt, int64_t output,
                     VirtualTimestamp scheduled = kT0) {
  Request r;
  r.request_id = id;
  r.prompt_tokens = prompt;
  r.output_tokens = output;
  r.arrival_virtual = scheduled;
  r.scheduled = scheduled;
  return r;
}

Request decoding_request(const std::string& id, int64_t prompt,
                         int64_t decoded) {
  Request r = make_request(id, prompt, decoded + 10);
  r.prefill_progress = prompt;
  r.decoded = decoded;
  r.state = RequestState::kRunning;
  return r;
}

TEST(FormBatchTest, MixedFillsDecodesThenChunk) {
  EngineConfig cfg;
  std::vector<Request> running;
  for (int i = 0; i < 4; ++i) {
    running.push_back(decoding_request("d" + std::to_string(i), 100, 3));
  }
  std::vector<Request> queue{make_request("p", 1000, 10)};
  BatchPlan plan = form_batch(queue, running, cfg, 1000);
  EXPECT_EQ(plan.composition.num_decodes(), 4);
  ASSERT_EQ(plan.composition.prefill_chunks.size(), 1u);
  EXPECT_EQ(plan.composition.prefill_chunks[0].chunk_tokens, 508);
  EXPECT_EQ(plan.composition.prefill_chunks[0].context_len_before, 0);
  EXPECT_EQ(plan.admitted, std::vector<std::string>{"p"});
  EXPECT_EQ(plan.composition.decodes[0].context_len, 103);
}

TEST(FormBatchTest, PrefillPrioritizedStarvesDecodes) {
  EngineConfig cfg;
  cfg.policy = SchedulingPolicy::kPrefillPrioritized;
  std::vector<Request> running;
  for (int i = 0; i < 4; ++i) {
    running.push_back(decoding_request("d" + std::to_string(i), 100, 3));
  }
  std::vector<Request> queue{make_request("p", 1000, 10)};
  BatchPlan plan = form_batch(queue, running, cfg, 1000);
  EXPECT_EQ(plan.composition.num_decodes(), 0);
  ASSERT_EQ(plan.composition.prefill_chunks.size(), 1u);
  EXPECT_EQ(plan.composition.prefill_chunks[0].chunk_tokens, 512);
}

TEST(FormBatchTest, PrefillPrioritizedDecodesWhenHeadBlocked) {
  EngineConfig cfg;
  cfg.policy = SchedulingPolicy::kPrefillPrioritized;
  std::vector<Request> running{decoding_request("d", 100, 3)};
  std::vector<Request> queue{make_request("p", 1000, 10)};
  BatchPlan plan = form_batch(queue, running, cfg, /*free_kv_blocks=*/2);
  EXPECT_EQ(plan.composition.num_decodes(), 1);
  EXPECT_TRUE(plan.composition.prefill_chunks.empty());
}

TEST(FormBatchTest, EmptyStateGivesEmptyPlan) {
  EngineConfig cfg;
  EXPECT_TRUE(form_batch({}, {}, cfg, 100).empty());
}

TEST(FormBatchTest, KvBlocksHoldBackQueue) {
  EngineConfig cfg;
  std::vector<Request> queue{make_request("a", 100, 28),
                             make_request("b", 16, 16)};
  // a needs ceil(128/16) = 8 blocks; FCFS keeps b behind it.
  BatchPlan plan = form_batch(queue, {}, cfg, 7);
  EXPECT_TRUE(plan.empty());
  plan = form_batch(queue, {}, cfg, 9);
  EXPECT_EQ(plan.admitted, std::vector<std::string>{"a"});
  EXPECT_EQ(plan.kv_blocks_needed, 8);
}

// Straight-line restatement of the batching rule used to cross-check
// form_batch on random scheduler states.
BatchComposition reference_batch(const std::vector<Request>& queue,
                                 const std::vector<Request>& running,
                                 const EngineConfig& cfg, int64_t free_blocks,
                                 std::vector<std::string>* admitted) {
  BatchComposition out;
  int64_t tokens_left = cfg.max_batch_tokens;
  int64_t slots = cfg.max_running - static_cast<int64_t>(running.size());

  std::vector<const Request*> decodes;
  std::vector<const Request*> partial;
  for (const Request& r : running) {
    if (r.prefill_progress < r.prompt_tokens) {
      partial.push_back(&r);
    } else if (r.decoded < r.output_tokens) {
      decodes.push_back(&r);
    }
  }
  auto blocks = [&](const Request& r) {
    return (r.prompt_tokens + r.output_tokens + cfg.kv_block_tokens - 1) /
           cfg.kv_block_tokens;
  };
  bool head_fits = !queue.empty() && slots > 0 && blocks(queue[0]) <= free_blocks;
  bool take_decodes = true, take_prefills = true;
  if (cfg.policy == SchedulingPolicy::kPrefillPrioritized) {
    bool prefill_work = head_fits || !partial.empty();
    take_decodes = !prefill_work;
    take_prefills = prefill_work;
  }
  if (take_decodes) {
    for (const Request* r : decodes) {
      if (tokens_left == 0) break;
      out.decodes.push_back({r->request_id, r->prompt_tokens + r->decoded});
      tokens_left -= 1;
    }
  }
  if (take_prefills) {
    for (const Request* r : partial) {
      if (tokens_left == 0) break;
      int64_t n = r->prompt_tokens - r->prefill_progress;
      n = std::min(n, cfg.chunk_size);
      n = std::min(n, tokens_left);
      out.prefill_chunks.push_back({r->request_id, n, r->prefill_progress});
      tokens_left -= n;
    }
    for (const Request& q : queue) {
      if (tokens_left == 0 || slots == 0 || blocks(q) > free_blocks) break;
      free_blocks -= blocks(q);
      --slots;
      int64_t n = std::min({q.prompt_tokens, cfg.chunk_size, tokens_left});
      out.prefill_chunks.push_back({q.request_id, n, 0});
      tokens_left -= n;
      admitted->push_back(q.request_id);
    }
  }
  return out;
}

TEST(FormBatchTest, MatchesReferenceOnRandomStates) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 5000; ++trial) {
    EngineConfig cfg;
    cfg.policy = (rng() & 1) ? SchedulingPolicy::kMixed
                             : SchedulingPolicy::kPrefillPrioritized;
    cfg.chunk_size = 1 + static_cast<int64_t>(rng() % 600);
    cfg.max_batch_tokens = cfg.chunk_size + static_cast<int64_t>(rng() % 600);
    cfg.max_running = 1 + static_cast<int64_t>(rng() % 12);
    cfg.kv_block_tokens = 1 + static_cast<int64_t>(rng() % 32);
    std::vector<Request> running, queue;
    int n_run = static_cast<int>(rng() % (cfg.max_running + 1));
    for (int i = 0; i < n_run; ++i) {
      Request r = make_request("r" + std::to_string(i), 1 + rng() % 2000,
                               1 + rng() % 200);
      r.state = RequestState::kRunning;
      if (rng() % 3 == 0) {
        r.prefill_progress = static_cast<int64_t>(rng() % r.prompt_tokens);
      } else {
        r.prefill_progress = r.prompt_tokens;
        r.decoded = 1 + static_cast<int64_t>(rng() % r.output_tokens);
      }
      running.push_back(r);
    }
    int n_q = static_cast<int>(rng() % 8);
    for (int i = 0; i < n_q; ++i) {
      queue.push_back(make_request("q" + std::to_string(i), 1 + rng() % 3000,
                                   1 + rng() % 300));
    }
    int64_t free_blocks = static_cast<int64_t>(rng() % 800);
    std::vector<std::string> ref_admitted;
    BatchComposition want =
        reference_batch(queue, running, cfg, free_blocks, &ref_admitted);
    BatchPlan got = form_batch(queue, running, cfg, free_blocks);
    ASSERT_EQ(got.composition, want) << "trial " << trial;
    ASSERT_EQ(got.admitted, ref_admitted) << "trial " << trial;
    ASSERT_LE(got.composition.total_tokens(), cfg.max_batch_tokens);
  }
}

std::vector<TokenEvent> run_step(Scheduler& s, VirtualTimestamp start,
                                 Nanos d) {
  BatchPlan plan = s.plan_step(start);
  return s.complete_step(plan, start + d);
}

TEST(SchedulerTest, SingleRequestTimeline) {
  EngineConfig cfg;
  Scheduler s(cfg);
  s.submit(make_request("a", 512, 2));
  auto e1 = run_step(s, kT0, milliseconds(10));
  ASSERT_EQ(e1.size(), 1u);
  EXPECT_EQ(e1[0], (TokenEvent{"a", TokenKind::kFirstToken,
                               kT0 + milliseconds(10)}));
  auto e2 = run_step(s, kT0 + milliseconds(10), milliseconds(10));
  ASSERT_EQ(e2.size(), 2u);
  EXPECT_EQ(e2[0], (TokenEvent{"a", TokenKind::kOutputToken,
                               kT0 + milliseconds(20)}));
  EXPECT_EQ(e2[1],
            (TokenEvent{"a", TokenKind::kFinished, kT0 + milliseconds(20)}));
  EXPECT_TRUE(s.idle());
  EXPECT_EQ(s.finished(), 1);
  EXPECT_EQ(s.kv().reserved_blocks(), 0);
}

TEST(SchedulerTest, SingleOutputTokenFinishesWithFirstToken) {
  Scheduler s(EngineConfig{});
  s.submit(make_request("a", 100, 1));
  auto e = run_step(s, kT0, milliseconds(5));
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].kind, TokenKind::kFirstToken);
  EXPECT_EQ(e[1].kind, TokenKind::kFinished);
}

TEST(SchedulerTest, FutureRequestsAreNotEligible) {
  Scheduler s(EngineConfig{});
  s.submit(make_request("late", 64, 2, kT0 + milliseconds(200)));
  EXPECT_FALSE(s.has_work_at(kT0));
  EXPECT_TRUE(s.plan_step(kT0).empty());
  EXPECT_EQ(*s.earliest_queued(), kT0 + milliseconds(200));
  EXPECT_TRUE(s.has_work_at(kT0 + milliseconds(200)));
}

TEST(SchedulerTest, KvExhaustionQueuesUntilFinish) {
  EngineConfig cfg;
  cfg.kv_capacity_blocks = 40;
  Scheduler s(cfg);
  s.submit(make_request("a", 512, 64));  // 36 blocks
  s.submit(make_request("b", 512, 64));
  VirtualTimestamp t = kT0;
  BatchPlan p = s.plan_step(t);
  EXPECT_EQ(p.admitted, std::vector<std::string>{"a"});
  t = t + milliseconds(10);
  s.complete_step(p, t);
  bool b_admitted = false;
  bool a_finished = false;
  while (!b_admitted) {
    p = s.plan_step(t);
    for (const auto& id : p.admitted) {
      EXPECT_EQ(id, "b");
      EXPECT_TRUE(a_finished);
      b_admitted = true;
    }
    t = t + milliseconds(10);
    for (const auto& e : s.complete_step(p, t)) {
      if (e.request_id == "a" && e.kind == TokenKind::kFinished) {
        a_finished = true;
      }
    }
    s.check_invariants();
  }
}

TEST(SchedulerTest, NeverFittingRequestRejected) {
  EngineConfig cfg;
  cfg.kv_capacity_blocks = 4;
  Scheduler s(cfg);
  EXPECT_THROW(s.submit(make_request("huge", 1000, 10)), Error);
}

struct Simulation {
  std::map<std::string, int64_t> prefill_tokens;
  std::map<std::string, std::vector<TokenEvent>> events;
  int64_t mixed_batches = 0;
};

Simulation simulate(SchedulingPolicy policy, uint64_t seed) {
  EngineConfig cfg;
  cfg.policy = policy;
  cfg.chunk_size = 256;
  cfg.max_batch_tokens = 384;
  cfg.max_running = 16;
  cfg.kv_capacity_blocks = 600;
  Scheduler s(cfg);
  std::mt19937_64 rng(seed);
  VirtualTimestamp arrival = kT0;
  std::vector<Request> pending;
  for (int i = 0; i < 60; ++i) {
    arrival = arrival + milliseconds(rng() % 30);
    pending.push_back(make_request("r" + std::to_string(i), 1 + rng() % 1500,
                                   1 + rng() % 120, arrival));
  }
  Simulation sim;
  VirtualTimestamp t = kT0;
  size_t next = 0;
  while (next < pending.size() || !s.idle()) {
    while (next < pending.size() && pending[next].scheduled <= t) {
      s.submit(pending[next++]);
    }
    BatchPlan plan = s.plan_step(t);
    if (plan.empty()) {
      if (next == pending.size()) {
        ADD_FAILURE() << "scheduler stalled with work left";
        break;
      }
      t = pending[next].scheduled;
      continue;
    }
    for (const auto& c : plan.composition.prefill_chunks) {
      sim.prefill_tokens[c.request_id] += c.chunk_tokens;
    }
    if (!plan.composition.prefill_chunks.empty() &&
        !plan.composition.decodes.empty()) {
      ++sim.mixed_batches;
    }
    t = t + milliseconds(7);
    for (auto& e : s.complete_step(plan, t)) {
      sim.events[e.request_id].push_back(e);
    }
    s.check_invariants();
  }
  for (const auto& r : pending) {
    EXPECT_EQ(sim.prefill_tokens[r.request_id], r.prompt_tokens);
    const auto& ev = sim.events[r.request_id];
    int64_t tokens = 0;
    for (size_t i = 0; i < ev.size(); ++i) {
      if (i > 0) {
        EXPECT_LE(ev[i - 1].virtual_ts, ev[i].virtual_ts);
      }
      if (ev[i].kind != TokenKind::kFinished) ++tokens;
    }
    EXPECT_EQ(tokens, r.output_tokens) << r.request_id;
    EXPECT_EQ(ev.front().kind, TokenKind::kFirstToken);
    EXPECT_EQ(ev.back().kind, TokenKind::kFinished);
  }
  return sim;
}

TEST(SchedulerTest, ConservationMixed) {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Simulation sim = simulate(SchedulingPolicy::kMixed, seed);
    EXPECT_GT(sim.mixed_batches, 0);
  }
}

TEST(SchedulerTest, PrefillPrioritizedNeverMixes) {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    EXPECT_EQ(simulate(SchedulingPolicy::kPrefillPrioritized, seed)
                  .mixed_batches,
              0);
  }
}

TEST(KvBlockManagerTest, ReserveGrowRelease) {
  KvBlockManager kv(10, 16);
  kv.reserve("a", 4);
  EXPECT_EQ(kv.free_blocks(), 6);
  EXPECT_EQ(kv.live_blocks(), 0);
  kv.grow("a", 17);
  EXPECT_EQ(kv.block_table("a").size(), 2u);
  EXPECT_EQ(kv.live_blocks(), 2);
  EXPECT_THROW(kv.grow("a", 65), std::logic_error);
  EXPECT_THROW(kv.reserve("b", 7), std::logic_error);
  kv.release("a");
  EXPECT_EQ(kv.free_blocks(), 10);
  EXPECT_EQ(kv.live_blocks(), 0);
}

TEST(EngineConfigTest, ValidationAndJson) {
  EngineConfig cfg;
  cfg.max_batch_tokens = 100;
  EXPECT_THROW(cfg.validate(), Error);
  EngineConfig ok;
  ok.policy = SchedulingPolicy::kPrefillPrioritized;
  ok.pp_stages = 2;
  nlohmann::json j = ok;
  EngineConfig back = j.get<EngineConfig>();
  EXPECT_EQ(back.policy, SchedulingPolicy::kPrefillPrioritized);
  EXPECT_EQ(back.pp_stages, 2);
  EXPECT_EQ(back.num_workers(), 2);
  EXPECT_EQ(ok.blocks_for(512, 64), 36);
  EXPECT_THROW(policy_from_string("FIFO"), Error);
}

TEST(TokenEventTest, JsonRoundTrip) {
  TokenEvent e{"req-00001", TokenKind::kOutputToken,
               VirtualTimestamp(1'700'000'000'123'456'789)};
  nlohmann::json j = token_event_to_json(e);
  EXPECT_EQ(j["virtual_ts_ns"], "1700000000123456789");
  EXPECT_EQ(j["kind"], "OUTPUT_TOKEN");
  EXPECT_EQ(token_event_from_json(j), e);
}

}  // namespace
}  // namespace timewarp
