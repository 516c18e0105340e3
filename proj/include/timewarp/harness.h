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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "timewarp/engine.h"
#include "timewarp/runtime_predictor.h"
#include "timewarp/time_core.h"

namespace timewarp {

struct TokenDistribution {
  enum class Kind { kFixed, kUniform } kind = Kind::kFixed;
  int64_t value = 128;
  int64_t min = 1;
  int64_t max = 1;

  int64_t upper_bound() const { return kind == Kind::kFixed ? value : max; }
};

struct WorkloadSpec {
  enum class Source { kPoisson, kTrace } source = Source::kPoisson;
  double qps = 1.0;
  uint64_t seed = 0;
  int64_t num_requests = 1;
  TokenDistribution prompt_tokens;
  TokenDistribution output_tokens;
  std::string trace_path;

  void validate() const;
};

void to_json(nlohmann::json& j, const WorkloadSpec& w);
void from_json(const nlohmann::json& j, WorkloadSpec& w);

struct Arrival {
  std::string request_id;
  Nanos offset{0};  // from the start of the run
  int64_t prompt_tokens = 1;
  int64_t output_tokens = 1;

  bool operator==(const Arrival&) const = default;
};

std::string request_id_for(int64_t index);

// Poisson: i.i.d. exponential gaps (mean 1/qps) from a seeded generator,
// the first arrival one gap after the start. Trace: rows verbatim.
std::vector<Arrival> generate_arrivals(const WorkloadSpec& spec);
// CSV arrival_ms,prompt_tokens,output_tokens; throws TraceParseError.
std::vector<Arrival> parse_trace(const std::string& csv);
std::vector<Arrival> load_trace(const std::string& path);

struct TimekeeperSettings {
  Nanos jitter_cooldown{500'000};
  double drop_broadcast_probability = 0.0;
  uint64_t fault_seed = 1;
};

struct RunConfig {
  WorkloadSpec workload;
  EngineConfig engine;
  nlohmann::json predictor = {{"kind", "constant"}, {"duration_us", 20000}};
  HardwareSpec hardware;
  TimekeeperSettings timekeeper;

  // Hash over everything that shapes the schedule (mode and fault
  // injection excluded), used to refuse comparing unrelated runs.
  std::string fingerprint() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::string& path);

struct Submission {
  std::string request_id;
  VirtualTimestamp arrival_virtual;
  VirtualTimestamp scheduled;
  int64_t prompt_tokens = 1;
  int64_t output_tokens = 1;
};

nlohmann::json submission_to_json(const Submission& s);
Submission submission_from_json(const nlohmann::json& j);

struct DistributionSummary {
  int64_t count = 0;
  double p50 = 0;
  double p90 = 0;
  double p99 = 0;
  double mean = 0;
};

// Nearest-rank: the ceil(p/100 * n)-th smallest sample.
double nearest_rank(std::vector<double> samples, double percentile);
DistributionSummary summarize(const std::vector<double>& samples);

struct RequestMetrics {
  std::string request_id;
  int64_t ttft_ns = 0;
  std::optional<int64_t> tpot_mean_ns;  // absent for single-token outputs
};

struct RunReport {
  std::string mode;
  std::string fingerprint;
  std::vector<RequestMetrics> requests;  // sorted by request_id
  DistributionSummary ttft;
  DistributionSummary tpot;
  int64_t virtual_elapsed_ns = 0;
  int64_t wall_elapsed_ns = 0;
  double speedup = 0;

  std::vector<double> ttft_samples() const;
  std::vector<double> tpot_samples() const;
};

nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

// Throws IncompleteLog when a submitted request lacks FIRST_TOKEN or
// FINISHED.
RunReport collect_metrics(const std::vector<TokenEvent>& events,
                          const std::vector<Submission>& submissions,
                          int64_t virtual_elapsed_ns, int64_t wall_elapsed_ns);

// Two-sample Kolmogorov-Smirnov statistic (max CDF gap).
double ks_statistic(std::vector<double> a, std::vector<double> b);

struct MetricError {
  double p50 = 0;
  double p90 = 0;
  double p99 = 0;
  double ks = 0;
};

struct ComparisonSummary {
  MetricError ttft;
  MetricError tpot;
};

nlohmann::json comparison_to_json(const ComparisonSummary& c);

// Relative error |a - b| / b per percentile; b is the reference. Throws
// WorkloadMismatch when the fingerprints differ.
ComparisonSummary compare_runs(const RunReport& a, const RunReport& b);

struct OracleResult {
  std::vector<TokenEvent> events;  // timestamps relative to run start
  std::vector<Submission> submissions;
  int64_t virtual_elapsed_ns = 0;
  int64_t busy_ns = 0;  // sum of step durations
};

// Single-threaded discrete-event reference: same scheduler, exact clock.
OracleResult run_oracle(const RunConfig& config,
                        const std::vector<Arrival>& arrivals);

struct ScheduleDiff {
  int64_t matched = 0;
  int64_t unmatched = 0;  // events present in only one schedule
  int64_t max_deviation_ns = 0;
  std::string worst_event;
};

// Pairs events by (request_id, kind, ordinal) after subtracting each
// schedule's origin.
ScheduleDiff diff_schedules(const std::vector<TokenEvent>& a,
                            VirtualTimestamp origin_a,
                            const std::vector<TokenEvent>& b,
                            VirtualTimestamp origin_b);

// JSON lines helpers.
std::vector<nlohmann::json> read_json_lines(const std::string& path);
std::vector<TokenEvent> read_events(const std::string& path);
std::vector<Submission> read_submissions(const std::string& path);

void write_requests_csv(const RunReport& report, const std::string& path);
// Two-column (value_ms, cumulative fraction) file for plotting.
void write_cdf(std::vector<double> samples_ns, const std::string& path);

}  // namespace timewarp
