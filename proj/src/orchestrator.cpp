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

#include "timewarp/orchestrator.h"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <spdlog/spdlog.h>

#include "timewarp/error.h"
#include "timewarp/wire_protocol.h"

namespace timewarp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIncompleteLog, "missing " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kIncompleteLog, path + ": " + e.what());
  }
}

pid_t spawn(const std::vector<std::string>& argv, const std::string& log_path) {
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::kConfigError, "fork failed");
  if (pid == 0) {
    int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      ::dup2(fd, STDOUT_FILENO);
      ::dup2(fd, STDERR_FILENO);
      ::close(fd);
    }
    ::execv(args[0], args.data());
    std::perror("execv");
    std::_Exit(127);
  }
  return pid;
}

std::string describe_status(int status) {
  if (WIFEXITED(status)) return "exit " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return "signal " + std::to_string(WTERMSIG(status));
  return "status " + std::to_string(status);
}

class ChildSet {
 public:
  ~ChildSet() { kill_all(SIGKILL); }

  void add(const std::string& name, pid_t pid) { live_[pid] = name; }

  // Waits for the named children; throws if any fails or time runs out.
  void wait_for(const std::vector<std::string>& names,
                std::chrono::steady_clock::time_point deadline) {
    auto pending = [&] {
      for (const auto& [pid, name] : live_) {
        if (std::find(names.begin(), names.end(), name) != names.end()) {
          return true;
        }
      }
      return false;
    };
    while (pending()) {
      int status = 0;
      pid_t pid = ::waitpid(-1, &status, WNOHANG);
      if (pid > 0) {
        auto it = live_.find(pid);
        if (it == live_.end()) continue;
        std::string name = it->second;
        live_.erase(it);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
          kill_all(SIGTERM);
          throw Error(ErrorCode::kProtocolError,
                      name + " failed (" + describe_status(status) +
                          "); see " + name + ".log");
        }
        continue;
      }
      if (std::chrono::steady_clock::now() > deadline) {
        kill_all(SIGTERM);
        throw Error(ErrorCode::kProtocolError, "benchmark run timed out");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  void stop(const std::string& name) {
    for (auto it = live_.begin(); it != live_.end(); ++it) {
      if (it->second != name) continue;
      ::kill(it->first, SIGTERM);
      int status = 0;
      ::waitpid(it->first, &status, 0);
      live_.erase(it);
      return;
    }
  }

  void kill_all(int sig) {
    for (const auto& [pid, name] : live_) ::kill(pid, sig);
    for (const auto& [pid, name] : live_) {
      int status = 0;
      ::waitpid(pid, &status, 0);
    }
    live_.clear();
  }

 private:
  std::map<pid_t, std::string> live_;
};

}  // namespace

ToolPaths tool_paths_from_self() {
  fs::path self = fs::read_symlink("/proc/self/exe");
  return {self.string(), (self.parent_path() / "timekeeper").string()};
}

VirtualTimestamp run_origin(const std::string& out_dir) {
  json meta = read_json_file(out_dir + "/dispatcher_meta.json");
  return VirtualTimestamp(ns_from_json(meta.at("t0_virtual_ns"), "t0_virtual_ns"));
}

RunReport report_from_run_dir(const std::string& out_dir,
                              const std::string& fingerprint,
                              const std::string& mode) {
  json dmeta = read_json_file(out_dir + "/dispatcher_meta.json");
  json emeta = read_json_file(out_dir + "/engine_meta.json");
  auto ns = [](const json& j, const char* key) {
    return ns_from_json(j.at(key), key);
  };
  auto events = read_events(out_dir + "/events.jsonl");
  auto submissions = read_submissions(out_dir + "/submissions.jsonl");
  RunReport report = collect_metrics(
      events, submissions, ns(emeta, "end_virtual_ns") - ns(dmeta, "t0_virtual_ns"),
      ns(emeta, "end_wall_ns") - ns(dmeta, "t0_wall_ns"));
  report.mode = mode;
  report.fingerprint = fingerprint;
  return report;
}

void write_report_files(const RunReport& report, const std::string& out_dir) {
  std::ofstream(out_dir + "/report.json") << report_to_json(report).dump(2)
                                          << '\n';
  write_requests_csv(report, out_dir + "/requests.csv");
  write_cdf(report.ttft_samples(), out_dir + "/ttft_cdf.dat");
  write_cdf(report.tpot_samples(), out_dir + "/tpot_cdf.dat");
}

RunReport run_benchmark(const BenchRunOptions& options) {
  const RunConfig& config = options.config;
  config.validate();
  fs::create_directories(options.out_dir);
  const std::string out = fs::absolute(options.out_dir).string();
  const std::string config_path = out + "/config.json";
  std::ofstream(config_path) << json(config).dump(2) << '\n';

  char tmpl[] = "/tmp/timewarp-XXXXXX";
  if (::mkdtemp(tmpl) == nullptr) {
    throw Error(ErrorCode::kConfigError, "mkdtemp failed");
  }
  const std::string sock_dir = tmpl;
  const std::string req = "unix:" + sock_dir + "/req.sock";
  const std::string sub = "unix:" + sock_dir + "/sub.sock";
  const std::string eng = "unix:" + sock_dir + "/engine.sock";
  const bool timewarp = config.engine.mode == ExecutionMode::kTimewarp;
  const std::string mode = timewarp ? "timewarp" : "sleep";
  const auto deadline = std::chrono::steady_clock::now() + options.timeout;

  ChildSet children;
  std::vector<std::string> tk_args;
  if (timewarp) {
    std::vector<std::string> argv = {
        options.tools.timekeeper,
        "serve",
        "--request-endpoint", req,
        "--broadcast-endpoint", sub,
        "--jitter-cooldown-us",
        std::to_string(config.timekeeper.jitter_cooldown.count() / 1000),
        "--log", out + "/timekeeper.log.jsonl",
        "--expect-actors", std::to_string(config.engine.num_workers() + 1)};
    if (config.timekeeper.drop_broadcast_probability > 0) {
      argv.insert(argv.end(),
                  {"--fault-drop-broadcasts",
                   std::to_string(config.timekeeper.drop_broadcast_probability),
                   "--fault-seed", std::to_string(config.timekeeper.fault_seed)});
    }
    children.add("timekeeper", spawn(argv, out + "/timekeeper.log"));
    tk_args = {"--tk-request", req, "--tk-broadcast", sub};
  }

  std::vector<std::string> engine_argv = {options.tools.bench, "engine",
                                          "--config", config_path,
                                          "--mode", mode,
                                          "--out", out,
                                          "--listen", eng};
  engine_argv.insert(engine_argv.end(), tk_args.begin(), tk_args.end());
  children.add("engine", spawn(engine_argv, out + "/engine.log"));

  std::vector<std::string> dispatch_argv = {options.tools.bench, "dispatch",
                                            "--config", config_path,
                                            "--mode", mode,
                                            "--out", out,
                                            "--engine", eng};
  dispatch_argv.insert(dispatch_argv.end(), tk_args.begin(), tk_args.end());
  children.add("dispatcher", spawn(dispatch_argv, out + "/dispatcher.log"));

  try {
    children.wait_for({"engine", "dispatcher"}, deadline);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(sock_dir, ec);
    throw;
  }
  if (timewarp) children.stop("timekeeper");
  std::error_code ec;
  fs::remove_all(sock_dir, ec);

  RunReport report = report_from_run_dir(out, config.fingerprint(), mode);
  write_report_files(report, out);
  return report;
}

}  // namespace timewarp
