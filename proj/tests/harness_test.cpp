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

#include "timewarp/harness.h"

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.h"
#include "timewarp/error.h"

namespace timewarp {
namespace {

using std::chrono::milliseconds;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no timewarp::Error thrown";
  return ErrorCode::kProtocolError;
}

double mean_gap_s(const std::vector<Arrival>& a) {
  return std::chrono::duration<double>(a.back().offset).count() /
         static_cast<double>(a.size());
}

WorkloadSpec poisson(double qps, uint64_t seed, int64_t n) {
  WorkloadSpec w;
  w.qps = qps;
  w.seed = seed;
  w.num_requests = n;
  w.prompt_tokens = {TokenDistribution::Kind::kUniform, 0, 32, 1024};
  w.output_tokens = {TokenDistribution::Kind::kUniform, 0, 16, 128};
  return w;
}

TEST(ArrivalsTest, PoissonMeanGap) {
  auto a = generate_arrivals(poisson(1.0, 7, 10'000));
  ASSERT_EQ(a.size(), 10'000u);
  EXPECT_NEAR(mean_gap_s(a), 1.0, 0.03);
  for (size_t i = 1; i < a.size(); ++i) EXPECT_LE(a[i - 1].offset, a[i].offset);
  for (const auto& r : a) {
    EXPECT_GE(r.prompt_tokens, 32);
    EXPECT_LE(r.prompt_tokens, 1024);
    EXPECT_GE(r.output_tokens, 16);
    EXPECT_LE(r.output_tokens, 128);
  }
  EXPECT_EQ(a[0].request_id, "req-00000");
}

TEST(ArrivalsTest, RateRatio) {
  double slow = mean_gap_s(generate_arrivals(poisson(0.5, 7, 10'000)));
  double fast = mean_gap_s(generate_arrivals(poisson(8.0, 7, 10'000)));
  EXPECT_NEAR(slow / fast, 16.0, 16.0 * 0.05);
}

TEST(ArrivalsTest, DeterministicPerSeed) {
  EXPECT_EQ(generate_arrivals(poisson(4, 3, 100)),
            generate_arrivals(poisson(4, 3, 100)));
  EXPECT_NE(generate_arrivals(poisson(4, 3, 100)),
            generate_arrivals(poisson(4, 4, 100)));
}

TEST(ArrivalsTest, TraceRowsVerbatim) {
  auto a = parse_trace(
      "arrival_ms,prompt_tokens,output_tokens\n0,10,2\n100,20,3\n250.5,30,4\n");
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].offset, Nanos(0));
  EXPECT_EQ(a[1].offset, milliseconds(100));
  EXPECT_EQ(a[2].offset, Nanos(250'500'000));
  EXPECT_EQ(a[2].prompt_tokens, 30);
  EXPECT_EQ(a[2].output_tokens, 4);
}

TEST(ArrivalsTest, TraceFileThroughSpec) {
  testing::TempDir dir;
  {
    std::ofstream f(dir.file("t.csv"));
    f << "arrival_ms,prompt_tokens,output_tokens\n5,1,1\n6,2,2\n";
  }
  WorkloadSpec w;
  w.source = WorkloadSpec::Source::kTrace;
  w.trace_path = dir.file("t.csv");
  auto a = generate_arrivals(w);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[1].offset, milliseconds(6));
}

TEST(ArrivalsTest, TraceErrors) {
  EXPECT_EQ(code_of([] { parse_trace("a,b,c\n1,2,3\n"); }),
            ErrorCode::kTraceParseError);
  EXPECT_EQ(code_of([] {
              parse_trace("arrival_ms,prompt_tokens,output_tokens\n1,x,3\n");
            }),
            ErrorCode::kTraceParseError);
  EXPECT_EQ(code_of([] {
              parse_trace(
                  "arrival_ms,prompt_tokens,output_tokens\n5,1,1\n4,1,1\n");
            }),
            ErrorCode::kTraceParseError);
  EXPECT_EQ(code_of([] {
              parse_trace("arrival_ms,prompt_tokens,output_tokens\n5,0,1\n");
            }),
            ErrorCode::kTraceParseError);
  EXPECT_EQ(code_of([] { load_trace("/nonexistent.csv"); }),
            ErrorCode::kTraceParseError);
}

TEST(PercentileTest, NearestRank) {
  std::vector<double> s{15, 20, 35, 40, 50};
  EXPECT_EQ(nearest_rank(s, 30), 20);
  EXPECT_EQ(nearest_rank(s, 40), 20);
  EXPECT_EQ(nearest_rank(s, 50), 35);
  EXPECT_EQ(nearest_rank(s, 100), 50);
  std::vector<double> h;
  for (int i = 100; i >= 1; --i) h.push_back(i);
  EXPECT_EQ(nearest_rank(h, 99), 99);
  EXPECT_EQ(nearest_rank(h, 90), 90);
  DistributionSummary d = summarize(h);
  EXPECT_EQ(d.count, 100);
  EXPECT_DOUBLE_EQ(d.mean, 50.5);
  EXPECT_EQ(d.p50, 50);
}

TokenEvent ev(const std::string& id, TokenKind k, int64_t ms) {
  return {id, k, VirtualTimestamp(0) + milliseconds(ms)};
}

Submission sub(const std::string& id, int64_t arrival_ms, int64_t out) {
  return {id, VirtualTimestamp(0) + milliseconds(arrival_ms),
          VirtualTimestamp(0) + milliseconds(arrival_ms), 16, out};
}

TEST(MetricsTest, TtftAndTpot) {
  std::vector<TokenEvent> events{
      ev("a", TokenKind::kFirstToken, 10),  ev("a", TokenKind::kOutputToken, 20),
      ev("a", TokenKind::kOutputToken, 30), ev("a", TokenKind::kFinished, 30),
      ev("b", TokenKind::kFirstToken, 12),  ev("b", TokenKind::kFinished, 12)};
  RunReport r =
      collect_metrics(events, {sub("a", 0, 3), sub("b", 2, 1)}, 30'000'000,
                      3'000'000);
  ASSERT_EQ(r.requests.size(), 2u);
  EXPECT_EQ(r.requests[0].ttft_ns, 10'000'000);
  EXPECT_EQ(*r.requests[0].tpot_mean_ns, 10'000'000);
  EXPECT_EQ(r.requests[1].ttft_ns, 10'000'000);
  EXPECT_FALSE(r.requests[1].tpot_mean_ns);
  EXPECT_EQ(r.ttft.count, 2);
  EXPECT_EQ(r.tpot.count, 1);
  EXPECT_DOUBLE_EQ(r.speedup, 10.0);
}

TEST(MetricsTest, MissingTerminalEventIsIncomplete) {
  std::vector<TokenEvent> events{ev("a", TokenKind::kFirstToken, 10)};
  EXPECT_EQ(code_of([&] { collect_metrics(events, {sub("a", 0, 3)}, 1, 1); }),
            ErrorCode::kIncompleteLog);
  EXPECT_EQ(code_of([&] { collect_metrics({}, {sub("a", 0, 3)}, 1, 1); }),
            ErrorCode::kIncompleteLog);
}

TEST(CompareTest, IdenticalReportsHaveZeroError) {
  RunReport r = collect_metrics(
      {ev("a", TokenKind::kFirstToken, 10), ev("a", TokenKind::kFinished, 30)},
      {sub("a", 0, 3)}, 1, 1);
  ComparisonSummary c = compare_runs(r, r);
  EXPECT_EQ(c.ttft.p50, 0);
  EXPECT_EQ(c.ttft.p99, 0);
  EXPECT_EQ(c.tpot.p50, 0);
  EXPECT_EQ(c.ttft.ks, 0);
}

TEST(CompareTest, FingerprintMismatch) {
  RunConfig a, b;
  b.workload.seed = 99;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  RunConfig c = a;
  c.engine.mode = ExecutionMode::kSleep;
  c.timekeeper.drop_broadcast_probability = 1.0;
  EXPECT_EQ(a.fingerprint(), c.fingerprint());
  RunReport ra, rb;
  ra.fingerprint = a.fingerprint();
  rb.fingerprint = b.fingerprint();
  EXPECT_EQ(code_of([&] { compare_runs(ra, rb); }),
            ErrorCode::kWorkloadMismatch);
}

TEST(CompareTest, RelativeErrorUsesReference) {
  RunReport a, b;
  a.requests = {{"x", 110, std::nullopt}};
  b.requests = {{"x", 100, std::nullopt}};
  a.ttft = summarize({110});
  b.ttft = summarize({100});
  ComparisonSummary c = compare_runs(a, b);
  EXPECT_NEAR(c.ttft.p50, 0.10, 1e-12);
  EXPECT_EQ(c.ttft.ks, 1.0);
}

TEST(CompareTest, KsStatistic) {
  EXPECT_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(ks_statistic({1, 2}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2, 3, 4}, {3, 4, 5, 6}), 0.5);
}

TEST(OracleTest, BusyWorkerDelaysLaterArrival) {
  RunConfig cfg;
  cfg.predictor = {{"kind", "constant"}, {"duration_us", 500'000}};
  std::vector<Arrival> arrivals{{"A", Nanos(0), 16, 1},
                                {"B", milliseconds(200), 16, 1}};
  OracleResult r = run_oracle(cfg, arrivals);
  ASSERT_EQ(r.submissions.size(), 2u);
  EXPECT_EQ(r.submissions[1].arrival_virtual.ns(), 200'000'000);
  std::map<std::string, int64_t> first;
  for (const auto& e : r.events) {
    if (e.kind == TokenKind::kFirstToken) first[e.request_id] = e.virtual_ts.ns();
  }
  EXPECT_EQ(first["A"], 500'000'000);
  EXPECT_EQ(first["B"], 1'000'000'000);
  RunReport rep = collect_metrics(r.events, r.submissions, r.virtual_elapsed_ns, 1);
  EXPECT_EQ(rep.requests[1].ttft_ns, 800'000'000);
}

TEST(OracleTest, ArrivalTimesAreStampedAsPlanned) {
  RunConfig cfg;
  std::vector<Arrival> arrivals{{"a", milliseconds(100), 8, 2},
                                {"b", milliseconds(250), 8, 2}};
  OracleResult r = run_oracle(cfg, arrivals);
  EXPECT_EQ(r.submissions[0].arrival_virtual.ns(), 100'000'000);
  EXPECT_EQ(r.submissions[1].arrival_virtual.ns(), 250'000'000);
}

TEST(OracleTest, SingleRequestTimeline) {
  RunConfig cfg;
  cfg.predictor = {{"kind", "constant"}, {"duration_us", 10'000}};
  OracleResult r = run_oracle(cfg, {{"a", Nanos(0), 512, 2}});
  ASSERT_EQ(r.events.size(), 3u);
  EXPECT_EQ(r.events[0].virtual_ts.ns(), 10'000'000);
  EXPECT_EQ(r.events[1].virtual_ts.ns(), 20'000'000);
  EXPECT_EQ(r.events[2].kind, TokenKind::kFinished);
  EXPECT_EQ(r.virtual_elapsed_ns, 20'000'000);
}

TEST(OracleTest, PipelineStagesMultiplyStepTime) {
  RunConfig cfg;
  cfg.predictor = {{"kind", "constant"}, {"duration_us", 10'000}};
  cfg.engine.pp_stages = 3;
  OracleResult r = run_oracle(cfg, {{"a", Nanos(0), 512, 1}});
  EXPECT_EQ(r.events[0].virtual_ts.ns(), 30'000'000);
}

TEST(ScheduleDiffTest, MatchesByOrdinal) {
  std::vector<TokenEvent> a{ev("x", TokenKind::kFirstToken, 10),
                            ev("x", TokenKind::kOutputToken, 20),
                            ev("x", TokenKind::kOutputToken, 30)};
  std::vector<TokenEvent> b = a;
  for (auto& e : b) e.virtual_ts = e.virtual_ts + milliseconds(1000);
  b[2].virtual_ts = b[2].virtual_ts + milliseconds(3);
  ScheduleDiff d = diff_schedules(a, VirtualTimestamp(0), b,
                                  VirtualTimestamp(0) + milliseconds(1000));
  EXPECT_EQ(d.matched, 3);
  EXPECT_EQ(d.unmatched, 0);
  EXPECT_EQ(d.max_deviation_ns, 3'000'000);
  b.pop_back();
  d = diff_schedules(a, VirtualTimestamp(0), b,
                     VirtualTimestamp(0) + milliseconds(1000));
  EXPECT_EQ(d.unmatched, 1);
}

TEST(ReportTest, DeterministicAndRoundTrips) {
  RunConfig cfg;
  cfg.workload = poisson(4, 11, 40);
  cfg.predictor = {{"kind", "constant"}, {"duration_us", 20'000}};
  auto arrivals = generate_arrivals(cfg.workload);
  OracleResult o1 = run_oracle(cfg, arrivals);
  OracleResult o2 = run_oracle(cfg, arrivals);
  RunReport r1 = collect_metrics(o1.events, o1.submissions, o1.virtual_elapsed_ns, 5);
  RunReport r2 = collect_metrics(o2.events, o2.submissions, o2.virtual_elapsed_ns, 5);
  r1.fingerprint = r2.fingerprint = cfg.fingerprint();
  EXPECT_EQ(report_to_json(r1).dump(2), report_to_json(r2).dump(2));
  RunReport back = report_from_json(report_to_json(r1));
  EXPECT_EQ(report_to_json(back).dump(), report_to_json(r1).dump());
}

TEST(ReportTest, EventAndSubmissionFilesRoundTrip) {
  testing::TempDir dir;
  std::vector<TokenEvent> events{ev("a", TokenKind::kFirstToken, 10),
                                 ev("a", TokenKind::kFinished, 10)};
  {
    std::ofstream f(dir.file("events.jsonl"));
    for (const auto& e : events) f << token_event_to_json(e).dump() << "\n";
    f << R"({"request_id":"a","ki)";  // torn final line
  }
  EXPECT_EQ(read_events(dir.file("events.jsonl")), events);
  {
    std::ofstream f(dir.file("subs.jsonl"));
    f << submission_to_json(sub("a", 0, 1)).dump() << "\n";
  }
  auto subs = read_submissions(dir.file("subs.jsonl"));
  ASSERT_EQ(subs.size(), 1u);
  EXPECT_EQ(subs[0].request_id, "a");
  RunReport r = collect_metrics(events, subs, 10, 10);
  write_requests_csv(r, dir.file("r.csv"));
  std::ifstream in(dir.file("r.csv"));
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_NE(ss.str().find("a,10000000"), std::string::npos) << ss.str();
}

TEST(RunConfigTest, JsonRoundTripAndValidation) {
  RunConfig cfg;
  cfg.workload = poisson(2, 5, 10);
  cfg.timekeeper.jitter_cooldown = milliseconds(1);
  nlohmann::json j = cfg;
  RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(back.fingerprint(), cfg.fingerprint());
  EXPECT_EQ(back.timekeeper.jitter_cooldown, milliseconds(1));
  j["workload"]["qps"] = 0;
  EXPECT_THROW(j.get<RunConfig>(), Error);
}

}  // namespace
}  // namespace timewarp
