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

#include <chrono>
#include <optional>
#include <string>

#include "timewarp/harness.h"

namespace timewarp {

struct ToolPaths {
  std::string bench;       // provides the engine/dispatch subcommands
  std::string timekeeper;  // timekeeper server binary
};

// Paths of the sibling binaries next to the running executable.
ToolPaths tool_paths_from_self();

struct BenchRunOptions {
  RunConfig config;
  std::string out_dir;
  ToolPaths tools;
  // Whole-run limit; the children are killed when it expires.
  std::chrono::seconds timeout{3600};
};

// Launches Timekeeper (timewarp mode only), engine and dispatcher as
// separate processes over unix sockets, waits for completion, then writes
// report.json, requests.csv and the CDF dumps into out_dir.
RunReport run_benchmark(const BenchRunOptions& options);

// Rebuilds the report from the logs in a finished run directory.
RunReport report_from_run_dir(const std::string& out_dir,
                              const std::string& fingerprint,
                              const std::string& mode);

// Writes report.json, requests.csv, ttft_cdf.dat and tpot_cdf.dat.
void write_report_files(const RunReport& report, const std::string& out_dir);

// Virtual timestamp of the dispatcher's run start, used to align event
// schedules across runs.
VirtualTimestamp run_origin(const std::string& out_dir);

}  // namespace timewarp
