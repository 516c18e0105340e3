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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "timewarp/error.h"
#include "timewarp/wire_protocol.h"

namespace timewarp {

using nlohmann::json;

namespace {

json dist_to_json(const TokenDistribution& d) {
  if (d.kind == TokenDistribution::Kind::kFixed) return d.value;
  return {{"min", d.min}, {"max", d.max}};
}

TokenDistribution dist_from_json(const json& j, const char* what) {
  TokenDistribution d;
  if (j.is_number_integer()) {
    d.kind = TokenDistribution::Kind::kFixed;
    d.value = j.get<int64_t>();
    if (d.value < 1) {
      throw Error(ErrorCode::kConfigError, std::string(what) + " must be >= 1");
    }
    return d;
  }
  if (!j.is_object() || !j.contains("min") || !j.contains("max")) {
    throw Error(ErrorCode::kConfigError,
                std::string(what) + " must be an integer or {min, max}");
  }
  d.kind = TokenDistribution::Kind::kUniform;
  d.min = j.at("min").get<int64_t>();
  d.max = j.at("max").get<int64_t>();
  if (d.min < 1 || d.max < d.min) {
    throw Error(ErrorCode::kConfigError,
                std::string(what) + " needs 1 <= min <= max");
  }
  return d;
}

int64_t draw(const TokenDistribution& d, std::mt19937_64& rng) {
  if (d.kind == TokenDistribution::Kind::kFixed) return d.value;
  return std::uniform_int_distribution<int64_t>(d.min, d.max)(rng);
}

std::string trim(const std::string& s) {
  auto first = s.find_first_not_of(" \t\r");
  auto last = s.find_last_not_of(" \t\r");
  return first == std::string::npos ? std::string()
                                    : s.substr(first, last - first + 1);
}

std::string read_file(const std::string& path, ErrorCode code) {
  std::ifstream in(path);
  if (!in) throw Error(code, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double relative_error(double a, double b) {
  if (b == 0) return a == 0 ? 0.0 : 1.0;
  return std::abs(a - b) / std::abs(b);
}

json summary_to_json(const DistributionSummary& s) {
  return {{"count", s.count},
          {"p50", s.p50},
          {"p90", s.p90},
          {"p99", s.p99},
          {"mean", s.mean}};
}

DistributionSummary summary_from_json(const json& j) {
  return {j.at("count").get<int64_t>(), j.at("p50").get<double>(),
          j.at("p90").get<double>(), j.at("p99").get<double>(),
          j.at("mean").get<double>()};
}

}  // namespace

void WorkloadSpec::validate() const {
  if (source == Source::kPoisson && !(qps > 0)) {
    throw Error(ErrorCode::kConfigError, "qps must be > 0");
  }
  if (source == Source::kPoisson && num_requests < 1) {
    throw Error(ErrorCode::kConfigError, "num_requests must be >= 1");
  }
  if (source == Source::kTrace && trace_path.empty()) {
    throw Error(ErrorCode::kConfigError, "trace source needs trace_path");
  }
}

void to_json(json& j, const WorkloadSpec& w) {
  j = {{"source", w.source == WorkloadSpec::Source::kPoisson ? "poisson"
                                                             : "trace"},
       {"qps", w.qps},
       {"seed", w.seed},
       {"num_requests", w.num_requests},
       {"prompt_tokens", dist_to_json(w.prompt_tokens)},
       {"output_tokens", dist_to_json(w.output_tokens)}};
  if (!w.trace_path.empty()) j["trace_path"] = w.trace_path;
}

void from_json(const json& j, WorkloadSpec& w) {
  w = WorkloadSpec{};
  std::string source = j.value("source", std::string("poisson"));
  if (source == "poisson") {
    w.source = WorkloadSpec::Source::kPoisson;
  } else if (source == "trace") {
    w.source = WorkloadSpec::Source::kTrace;
  } else {
    throw Error(ErrorCode::kConfigError, "unknown source '" + source + "'");
  }
  w.qps = j.value("qps", w.qps);
  w.seed = j.value("seed", w.seed);
  w.num_requests = j.value("num_requests", w.num_requests);
  if (j.contains("prompt_tokens")) {
    w.prompt_tokens = dist_from_json(j.at("prompt_tokens"), "prompt_tokens");
  }
  if (j.contains("output_tokens")) {
    w.output_tokens = dist_from_json(j.at("output_tokens"), "output_tokens");
  }
  w.trace_path = j.value("trace_path", std::string());
  w.validate();
}

std::string request_id_for(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "req-%05lld", static_cast<long long>(index));
  return buf;
}

std::vector<Arrival> generate_arrivals(const WorkloadSpec& spec) {
  spec.validate();
  if (spec.source == WorkloadSpec::Source::kTrace) {
    // Trace rows are replayed verbatim; num_requests applies to Poisson only.
    return load_trace(spec.trace_path);
  }
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> gap_s(spec.qps);
  std::vector<Arrival> out;
  out.reserve(static_cast<size_t>(spec.num_requests));
  int64_t t = 0;
  for (int64_t i = 0; i < spec.num_requests; ++i) {
    t += std::llround(gap_s(rng) * 1e9);
    Arrival a;
    a.request_id = request_id_for(i);
    a.offset = Nanos(t);
    a.prompt_tokens = draw(spec.prompt_tokens, rng);
    a.output_tokens = draw(spec.output_tokens, rng);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Arrival> parse_trace(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::vector<Arrival> out;
  auto fail = [&](const std::string& why) {
    return Error(ErrorCode::kTraceParseError,
                 "trace line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!header_seen) {
      if (cells != std::vector<std::string>{"arrival_ms", "prompt_tokens",
                                            "output_tokens"}) {
        throw fail("expected header arrival_ms,prompt_tokens,output_tokens");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 3) throw fail("expected 3 columns");
    Arrival a;
    try {
      size_t used = 0;
      double ms = std::stod(cells[0], &used);
      if (used != cells[0].size() || !(ms >= 0)) throw std::invalid_argument("");
      a.offset = Nanos(std::llround(ms * 1e6));
      a.prompt_tokens = std::stoll(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("");
      a.output_tokens = std::stoll(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("");
    } catch (const std::logic_error&) {
      throw fail("bad value in '" + line + "'");
    }
    if (a.prompt_tokens < 1 || a.output_tokens < 1) {
      throw fail("token counts must be >= 1");
    }
    if (!out.empty() && a.offset < out.back().offset) {
      throw fail("arrivals must be non-decreasing");
    }
    a.request_id = request_id_for(static_cast<int64_t>(out.size()));
    out.push_back(std::move(a));
  }
  if (!header_seen) throw fail("missing header");
  return out;
}

std::vector<Arrival> load_trace(const std::string& path) {
  return parse_trace(read_file(path, ErrorCode::kTraceParseError));
}

std::string RunConfig::fingerprint() const {
  json engine_json = engine;
  engine_json.erase("mode");
  json key = {{"workload", workload},
              {"engine", engine_json},
              {"predictor", predictor},
              {"hardware", hardware}};
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(key.dump())));
  return buf;
}

void RunConfig::validate() const {
  workload.validate();
  engine.validate();
  const int64_t max_blocks = engine.blocks_for(
      workload.prompt_tokens.upper_bound(), workload.output_tokens.upper_bound());
  if (workload.source == WorkloadSpec::Source::kPoisson &&
      max_blocks > engine.kv_capacity_blocks) {
    throw Error(ErrorCode::kConfigError,
                "largest request needs " + std::to_string(max_blocks) +
                    " KV blocks, pool has " +
                    std::to_string(engine.kv_capacity_blocks));
  }
  const uint64_t pool = static_cast<uint64_t>(engine.kv_capacity_blocks) *
                        static_cast<uint64_t>(engine.kv_block_tokens) *
                        engine.kv_bytes_per_token;
  if (pool > engine.device_capacity_bytes) {
    throw Error(ErrorCode::kConfigError,
                "KV pool of " + std::to_string(pool) +
                    " bytes exceeds device capacity");
  }
  if (timekeeper.jitter_cooldown.count() < 0) {
    throw Error(ErrorCode::kConfigError, "jitter cooldown must be >= 0");
  }
  if (timekeeper.drop_broadcast_probability < 0 ||
      timekeeper.drop_broadcast_probability > 1) {
    throw Error(ErrorCode::kConfigError,
                "drop_broadcast_probability must be in [0, 1]");
  }
}

void to_json(json& j, const RunConfig& c) {
  j = {{"workload", c.workload},
       {"engine", c.engine},
       {"predictor", c.predictor},
       {"hardware", c.hardware},
       {"timekeeper",
        {{"jitter_cooldown_us", c.timekeeper.jitter_cooldown.count() / 1000},
         {"drop_broadcast_probability",
          c.timekeeper.drop_broadcast_probability},
         {"fault_seed", c.timekeeper.fault_seed}}}};
}

void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  try {
    c.workload = j.at("workload").get<WorkloadSpec>();
    if (j.contains("engine")) c.engine = j.at("engine").get<EngineConfig>();
    if (j.contains("predictor")) c.predictor = j.at("predictor");
    if (j.contains("hardware")) c.hardware = j.at("hardware").get<HardwareSpec>();
    if (j.contains("timekeeper")) {
      const json& tk = j.at("timekeeper");
      c.timekeeper.jitter_cooldown =
          Nanos(tk.value("jitter_cooldown_us", int64_t{500}) * 1000);
      c.timekeeper.drop_broadcast_probability =
          tk.value("drop_broadcast_probability", 0.0);
      c.timekeeper.fault_seed = tk.value("fault_seed", uint64_t{1});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  c.validate();
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path, ErrorCode::kConfigError));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path + ": " + e.what());
  }
  return j.get<RunConfig>();
}

json submission_to_json(const Submission& s) {
  return {{"request_id", s.request_id},
          {"arrival_virtual_ns", ns_to_string(s.arrival_virtual.ns())},
          {"scheduled_ns", ns_to_string(s.scheduled.ns())},
          {"prompt_tokens", s.prompt_tokens},
          {"output_tokens", s.output_tokens}};
}

Submission submission_from_json(const json& j) {
  return {j.at("request_id").get<std::string>(),
          VirtualTimestamp(
              ns_from_json(j.at("arrival_virtual_ns"), "arrival_virtual_ns")),
          VirtualTimestamp(ns_from_json(j.at("scheduled_ns"), "scheduled_ns")),
          j.at("prompt_tokens").get<int64_t>(),
          j.at("output_tokens").get<int64_t>()};
}

double nearest_rank(std::vector<double> samples, double percentile) {
  if (samples.empty()) return 0;
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  auto rank = static_cast<size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

DistributionSummary summarize(const std::vector<double>& samples) {
  DistributionSummary s;
  s.count = static_cast<int64_t>(samples.size());
  if (samples.empty()) return s;
  s.p50 = nearest_rank(samples, 50);
  s.p90 = nearest_rank(samples, 90);
  s.p99 = nearest_rank(samples, 99);
  double total = 0;
  for (double v : samples) total += v;
  s.mean = total / static_cast<double>(samples.size());
  return s;
}

std::vector<double> RunReport::ttft_samples() const {
  std::vector<double> out;
  for (const auto& r : requests) out.push_back(static_cast<double>(r.ttft_ns));
  return out;
}

std::vector<double> RunReport::tpot_samples() const {
  std::vector<double> out;
  for (const auto& r : requests) {
    if (r.tpot_mean_ns) out.push_back(static_cast<double>(*r.tpot_mean_ns));
  }
  return out;
}

json report_to_json(const RunReport& r) {
  json requests = json::array();
  for (const auto& m : r.requests) {
    json row = {{"request_id", m.request_id}, {"ttft_ns", m.ttft_ns}};
    row["tpot_mean_ns"] =
        m.tpot_mean_ns ? json(*m.tpot_mean_ns) : json(nullptr);
    requests.push_back(std::move(row));
  }
  return {{"mode", r.mode},
          {"fingerprint", r.fingerprint},
          {"ttft_ns", summary_to_json(r.ttft)},
          {"tpot_ns", summary_to_json(r.tpot)},
          {"virtual_elapsed_ns", r.virtual_elapsed_ns},
          {"wall_elapsed_ns", r.wall_elapsed_ns},
          {"speedup", r.speedup},
          {"requests", std::move(requests)}};
}

RunReport report_from_json(const json& j) {
  RunReport r;
  r.mode = j.at("mode").get<std::string>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.ttft = summary_from_json(j.at("ttft_ns"));
  r.tpot = summary_from_json(j.at("tpot_ns"));
  r.virtual_elapsed_ns = j.at("virtual_elapsed_ns").get<int64_t>();
  r.wall_elapsed_ns = j.at("wall_elapsed_ns").get<int64_t>();
  r.speedup = j.at("speedup").get<double>();
  for (const auto& row : j.at("requests")) {
    RequestMetrics m;
    m.request_id = row.at("request_id").get<std::string>();
    m.ttft_ns = row.at("ttft_ns").get<int64_t>();
    if (!row.at("tpot_mean_ns").is_null()) {
      m.tpot_mean_ns = row.at("tpot_mean_ns").get<int64_t>();
    }
    r.requests.push_back(std::move(m));
  }
  return r;
}

RunReport collect_metrics(const std::vector<TokenEvent>& events,
                          const std::vector<Submission>& submissions,
                          int64_t virtual_elapsed_ns,
                          int64_t wall_elapsed_ns) {
  struct Marks {
    std::optional<VirtualTimestamp> first;
    std::optional<VirtualTimestamp> finished;
  };
  std::map<std::string, Marks> marks;
  for (const auto& e : events) {
    if (e.kind == TokenKind::kFirstToken) marks[e.request_id].first = e.virtual_ts;
    if (e.kind == TokenKind::kFinished) marks[e.request_id].finished = e.virtual_ts;
  }

  std::vector<Submission> subs = submissions;
  std::sort(subs.begin(), subs.end(),
            [](const Submission& a, const Submission& b) {
              return a.request_id < b.request_id;
            });
  RunReport report;
  for (const auto& s : subs) {
    auto it = marks.find(s.request_id);
    if (it == marks.end() || !it->second.first || !it->second.finished) {
      throw Error(ErrorCode::kIncompleteLog,
                  "request " + s.request_id + " has no " +
                      (it == marks.end() || !it->second.first
                           ? "FIRST_TOKEN"
                           : "FINISHED") +
                      " event");
    }
    RequestMetrics m;
    m.request_id = s.request_id;
    m.ttft_ns = (*it->second.first - s.arrival_virtual).count();
    if (s.output_tokens > 1) {
      m.tpot_mean_ns = (*it->second.finished - *it->second.first).count() /
                       (s.output_tokens - 1);
    }
    report.requests.push_back(std::move(m));
  }
  report.ttft = summarize(report.ttft_samples());
  report.tpot = summarize(report.tpot_samples());
  report.virtual_elapsed_ns = virtual_elapsed_ns;
  report.wall_elapsed_ns = wall_elapsed_ns;
  report.speedup = wall_elapsed_ns > 0
                       ? static_cast<double>(virtual_elapsed_ns) /
                             static_cast<double>(wall_elapsed_ns)
                       : 0.0;
  return report;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) return a.empty() && b.empty() ? 0.0 : 1.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double worst = 0;
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    worst = std::max(worst, std::abs(static_cast<double>(i) / na -
                                     static_cast<double>(j) / nb));
  }
  return worst;
}

json comparison_to_json(const ComparisonSummary& c) {
  auto one = [](const MetricError& e) {
    return json{{"p50", e.p50}, {"p90", e.p90}, {"p99", e.p99}, {"ks", e.ks}};
  };
  return {{"ttft", one(c.ttft)}, {"tpot", one(c.tpot)}};
}

ComparisonSummary compare_runs(const RunReport& a, const RunReport& b) {
  if (a.fingerprint != b.fingerprint) {
    throw Error(ErrorCode::kWorkloadMismatch,
                "runs use different workloads/configs (" + a.fingerprint +
                    " vs " + b.fingerprint + ")");
  }
  auto errors = [](const DistributionSummary& x, const DistributionSummary& y,
                   std::vector<double> xs, std::vector<double> ys) {
    return MetricError{relative_error(x.p50, y.p50),
                       relative_error(x.p90, y.p90),
                       relative_error(x.p99, y.p99),
                       ks_statistic(std::move(xs), std::move(ys))};
  };
  return {errors(a.ttft, b.ttft, a.ttft_samples(), b.ttft_samples()),
          errors(a.tpot, b.tpot, a.tpot_samples(), b.tpot_samples())};
}

OracleResult run_oracle(const RunConfig& config,
                        const std::vector<Arrival>& arrivals) {
  Scheduler scheduler(config.engine);
  auto predictor = make_predictor(config.predictor);
  const int64_t stages = config.engine.pp_stages;

  OracleResult result;
  VirtualTimestamp t(0);
  size_t next = 0;
  while (true) {
    while (next < arrivals.size() &&
           VirtualTimestamp(arrivals[next].offset.count()) <= t) {
      const Arrival& a = arrivals[next++];
      VirtualTimestamp at(a.offset.count());
      scheduler.submit({a.request_id, at, at, a.prompt_tokens, a.output_tokens});
      result.submissions.push_back(
          {a.request_id, at, at, a.prompt_tokens, a.output_tokens});
    }
    if (!scheduler.has_work_at(t)) {
      if (next == arrivals.size()) break;
      t = VirtualTimestamp(arrivals[next].offset.count());
      continue;
    }
    BatchPlan plan = scheduler.plan_step(t);
    if (plan.empty()) {
      throw std::logic_error("scheduler produced an empty plan with work");
    }
    Nanos d = predictor->predict(plan.composition, config.hardware);
    VirtualTimestamp end = t + d * stages;
    result.busy_ns += (end - t).count();
    for (auto& e : scheduler.complete_step(plan, end)) {
      result.events.push_back(std::move(e));
    }
    scheduler.check_invariants();
    t = end;
  }
  result.virtual_elapsed_ns = t.ns();
  return result;
}

ScheduleDiff diff_schedules(const std::vector<TokenEvent>& a,
                            VirtualTimestamp origin_a,
                            const std::vector<TokenEvent>& b,
                            VirtualTimestamp origin_b) {
  using Key = std::tuple<std::string, int, int64_t>;
  auto index = [](const std::vector<TokenEvent>& events,
                  VirtualTimestamp origin) {
    std::map<Key, int64_t> out;
    std::map<std::pair<std::string, int>, int64_t> ordinal;
    for (const auto& e : events) {
      auto kind = static_cast<int>(e.kind);
      int64_t n = ordinal[{e.request_id, kind}]++;
      out[{e.request_id, kind, n}] = (e.virtual_ts - origin).count();
    }
    return out;
  };
  auto ia = index(a, origin_a);
  auto ib = index(b, origin_b);
  ScheduleDiff diff;
  for (const auto& [key, ts] : ia) {
    auto it = ib.find(key);
    if (it == ib.end()) {
      ++diff.unmatched;
      continue;
    }
    ++diff.matched;
    int64_t dev = std::abs(ts - it->second);
    if (dev > diff.max_deviation_ns) {
      diff.max_deviation_ns = dev;
      diff.worst_event = std::get<0>(key) + "/" +
                         to_string(static_cast<TokenKind>(std::get<1>(key))) +
                         "#" + std::to_string(std::get<2>(key));
    }
  }
  for (const auto& [key, ts] : ib) {
    if (!ia.contains(key)) ++diff.unmatched;
  }
  return diff;
}

std::vector<json> read_json_lines(const std::string& path) {
  std::string text = read_file(path, ErrorCode::kIncompleteLog);
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      // A writer killed mid-line leaves a torn tail; anything else is real
      // corruption.
      if (in.peek() == EOF && text.back() != '\n') break;
      throw Error(ErrorCode::kIncompleteLog, path + ": malformed line");
    }
  }
  return out;
}

std::vector<TokenEvent> read_events(const std::string& path) {
  std::vector<TokenEvent> out;
  for (const auto& j : read_json_lines(path)) {
    out.push_back(token_event_from_json(j));
  }
  return out;
}

std::vector<Submission> read_submissions(const std::string& path) {
  std::vector<Submission> out;
  for (const auto& j : read_json_lines(path)) {
    out.push_back(submission_from_json(j));
  }
  return out;
}

void write_requests_csv(const RunReport& report, const std::string& path) {
  std::ofstream out(path);
  out << "request_id,ttft_ns,tpot_mean_ns\n";
  for (const auto& r : report.requests) {
    out << r.request_id << ',' << r.ttft_ns << ',';
    if (r.tpot_mean_ns) out << *r.tpot_mean_ns;
    out << '\n';
  }
}

void write_cdf(std::vector<double> samples_ns, const std::string& path) {
  std::sort(samples_ns.begin(), samples_ns.end());
  std::ofstream out(path);
  out << "# value_ms cumulative_fraction\n";
  const double n = static_cast<double>(samples_ns.size());
  for (size_t i = 0; i < samples_ns.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof(line), "%.6f %.6f\n", samples_ns[i] / 1e6,
                  static_cast<double>(i + 1) / n);
    out << line;
  }
}

}  // namespace timewarp
