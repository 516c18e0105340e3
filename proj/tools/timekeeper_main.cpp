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

// Timekeeper service entry point.
#include <signal.h>

#include <cstdio>
#include <thread>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "timewarp/error.h"
#include "timewarp/timekeeper_server.h"

int main(int argc, char** argv) {
  using namespace timewarp;
  reduce_timer_slack();

  CLI::App app{"Virtual-time coordinator for timewarp emulation"};
  app.require_subcommand(1);
  auto* serve = app.add_subcommand("serve", "Run the Timekeeper service");

  std::string request_ep;
  std::string broadcast_ep;
  int64_t cooldown_us = 500;
  std::string log_path;
  int64_t expect_actors = 0;
  double drop_probability = 0.0;
  uint64_t fault_seed = 1;
  serve->add_option("--request-endpoint", request_ep,
                    "tcp://host:port or unix:/path")
      ->required();
  serve->add_option("--broadcast-endpoint", broadcast_ep,
                    "tcp://host:port or unix:/path")
      ->required();
  serve->add_option("--jitter-cooldown-us", cooldown_us,
                    "Minimum wall gap between broadcasts")
      ->check(CLI::NonNegativeNumber);
  serve->add_option("--log", log_path, "Barrier event log (JSON lines)");
  serve->add_option("--expect-actors", expect_actors,
                    "Seal registration once this many actors joined")
      ->check(CLI::PositiveNumber);
  serve->add_option("--fault-drop-broadcasts", drop_probability,
                    "Drop each clock broadcast with this probability")
      ->check(CLI::Range(0.0, 1.0));
  serve->add_option("--fault-seed", fault_seed, "Seed for fault injection");
  CLI11_PARSE(app, argc, argv);

  TimekeeperOptions options;
  try {
    options.request_endpoint = Endpoint::parse(request_ep);
    options.broadcast_endpoint = Endpoint::parse(broadcast_ep);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "timekeeper: %s\n", e.what());
    return 2;
  }
  options.jitter_cooldown = Nanos(cooldown_us * 1000);
  options.log_path = log_path;
  if (expect_actors > 0) options.expect_actors = expect_actors;
  options.drop_broadcast_probability = drop_probability;
  options.fault_seed = fault_seed;

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  TimekeeperServer server(options);
  try {
    server.start();
  } catch (const std::exception& e) {
    spdlog::error("timekeeper: {}", e.what());
    return 1;
  }
  spdlog::info("timekeeper serving requests on {} and broadcasts on {}",
               request_ep, broadcast_ep);

  std::thread([&server, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("timekeeper: signal {}, shutting down", sig);
    server.stop();
  }).detach();

  server.wait();
  server.stop();
  return 0;
}
