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

// Benchmark harness: orchestration, comparison and the reference simulator,
// plus the engine and dispatcher process bodies it launches.
#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "timewarp/engine_runtime.h"
#include "timewarp/error.h"
#include "timewarp/harness.h"
#include "timewarp/orchestrator.h"

namespace {

using namespace timewarp;
using nlohmann::json;

RunConfig config_with_mode(const std::string& path, const std::string& mode) {
  RunConfig config = load_run_config(path);
  if (!mode.empty()) config.engine.mode = mode_from_string(mode);
  return config;
}

RunReport load_report(const std::string& path) {
  std::string file = path;
  if (std::filesystem::is_directory(path)) file = path + "/report.json";
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::kIncompleteLog, "cannot read " + file);
  return report_from_json(json::parse(in));
}

void print_report(const RunReport& r) {
  std::printf("%-8s p50 %9.3f ms  p90 %9.3f ms  p99 %9.3f ms  (n=%lld)\n",
              "TTFT", r.ttft.p50 / 1e6, r.ttft.p90 / 1e6, r.ttft.p99 / 1e6,
              static_cast<long long>(r.ttft.count));
  std::printf("%-8s p50 %9.3f ms  p90 %9.3f ms  p99 %9.3f ms  (n=%lld)\n",
              "TPOT", r.tpot.p50 / 1e6, r.tpot.p90 / 1e6, r.tpot.p99 / 1e6,
              static_cast<long long>(r.tpot.count));
  std::printf("virtual %.3f s, wall %.3f s, speedup %.2fx\n",
              r.virtual_elapsed_ns / 1e9, r.wall_elapsed_ns / 1e9, r.speedup);
}

std::optional<Endpoint> optional_endpoint(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return Endpoint::parse(s);
}

int run_engine_process(const EngineRunOptions& options) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  EngineRuntime runtime(options);
  std::thread([&runtime, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    runtime.flush();
    spdlog::warn("engine: aborted by signal {}; partial event log flushed",
                 sig);
    std::_Exit(130);
  }).detach();

  try {
    EngineStats stats = runtime.run();
    spdlog::info("engine: {} steps, {} requests, {} events, {} late windows",
                 stats.steps, stats.requests_finished, stats.events,
                 stats.late_windows);
    return 0;
  } catch (const Error& e) {
    runtime.flush();
    if (e.code() == ErrorCode::kPhantomRead) {
      spdlog::critical("engine: PhantomRead: {}; emulation run aborted",
                       e.detail());
      std::_Exit(3);
    }
    spdlog::error("engine: {}: {}", to_string(e.code()), e.detail());
  } catch (const std::exception& e) {
    runtime.flush();
    spdlog::error("engine: {}", e.what());
  }
  // Worker threads may be blocked in the protocol; do not unwind them.
  std::fflush(nullptr);
  std::_Exit(2);
}

}  // namespace

int main(int argc, char** argv) {
  reduce_timer_slack();
  CLI::App app{"Timewarp benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, mode, out_dir;
  int64_t timeout_s = 3600;
  auto* run = app.add_subcommand("run", "Run one benchmark end to end");
  run->add_option("--config", config_path, "Run config JSON")->required();
  run->add_option("--mode", mode, "timewarp or sleep")
      ->required()
      ->check(CLI::IsMember({"timewarp", "sleep"}, CLI::ignore_case));
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--timeout-s", timeout_s, "Kill the run after this long");

  std::string report_a, report_b;
  auto* compare = app.add_subcommand("compare", "Compare two run reports");
  compare->add_option("a", report_a, "Report (or run dir) under test")->required();
  compare->add_option("b", report_b, "Reference report (or run dir)")->required();

  auto* oracle = app.add_subcommand(
      "oracle", "Single-threaded discrete-event reference run");
  oracle->add_option("--config", config_path, "Run config JSON")->required();
  oracle->add_option("--out", out_dir, "Write events/report here");

  std::string listen, engine_ep, tk_request, tk_broadcast;
  auto* engine = app.add_subcommand("engine", "Engine process (internal)");
  engine->group("");
  for (auto* sub : {engine}) {
    sub->add_option("--config", config_path)->required();
    sub->add_option("--mode", mode)->required();
    sub->add_option("--out", out_dir)->required();
    sub->add_option("--listen", listen)->required();
    sub->add_option("--tk-request", tk_request);
    sub->add_option("--tk-broadcast", tk_broadcast);
  }
  auto* dispatch = app.add_subcommand("dispatch", "Dispatcher process (internal)");
  dispatch->group("");
  dispatch->add_option("--config", config_path)->required();
  dispatch->add_option("--mode", mode)->required();
  dispatch->add_option("--out", out_dir)->required();
  dispatch->add_option("--engine", engine_ep)->required();
  dispatch->add_option("--tk-request", tk_request);
  dispatch->add_option("--tk-broadcast", tk_broadcast);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      BenchRunOptions options;
      options.config = config_with_mode(config_path, mode);
      options.out_dir = out_dir;
      options.tools = tool_paths_from_self();
      options.timeout = std::chrono::seconds(timeout_s);
      RunReport report = run_benchmark(options);
      print_report(report);
      return 0;
    }
    if (*compare) {
      ComparisonSummary c = compare_runs(load_report(report_a),
                                         load_report(report_b));
      std::cout << comparison_to_json(c).dump(2) << '\n';
      return 0;
    }
    if (*oracle) {
      RunConfig config = load_run_config(config_path);
      OracleResult result = run_oracle(config, generate_arrivals(config.workload));
      RunReport report = collect_metrics(result.events, result.submissions,
                                         result.virtual_elapsed_ns, 0);
      report.mode = "oracle";
      report.fingerprint = config.fingerprint();
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream events(out_dir + "/events.jsonl");
        for (const auto& e : result.events) {
          events << token_event_to_json(e).dump() << '\n';
        }
        std::ofstream subs(out_dir + "/submissions.jsonl");
        for (const auto& s : result.submissions) {
          subs << submission_to_json(s).dump() << '\n';
        }
        write_report_files(report, out_dir);
      }
      print_report(report);
      return 0;
    }
    if (*engine) {
      EngineRunOptions options;
      options.config = config_with_mode(config_path, mode);
      options.listen = Endpoint::parse(listen);
      options.timekeeper_request = optional_endpoint(tk_request);
      options.timekeeper_broadcast = optional_endpoint(tk_broadcast);
      options.out_dir = out_dir;
      return run_engine_process(options);
    }
    if (*dispatch) {
      DispatcherOptions options;
      options.config = config_with_mode(config_path, mode);
      options.engine = Endpoint::parse(engine_ep);
      options.timekeeper_request = optional_endpoint(tk_request);
      options.timekeeper_broadcast = optional_endpoint(tk_broadcast);
      options.out_dir = out_dir;
      run_dispatcher(options);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "bench: %s: %s\n",
                 std::string(to_string(e.code())).c_str(), e.detail().c_str());
    return e.code() == ErrorCode::kWorkloadMismatch ? 3 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bench: %s\n", e.what());
    return 1;
  }
  return 0;
}
