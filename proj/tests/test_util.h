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

#include <stdlib.h>

#include <filesystem>
#include <memory>
#include <string>

#include "timewarp/client.h"
#include "timewarp/timekeeper_server.h"

namespace timewarp::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    char tmpl[] = "/tmp/tw-test-XXXXXX";
    path_ = ::mkdtemp(tmpl);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

// In-process Timekeeper on fresh unix sockets.
class LocalTimekeeper {
 public:
  explicit LocalTimekeeper(TimekeeperOptions base = {}) {
    base.request_endpoint = Endpoint::parse("unix:" + dir_.file("req.sock"));
    base.broadcast_endpoint = Endpoint::parse("unix:" + dir_.file("sub.sock"));
    if (base.log_path == "auto") base.log_path = dir_.file("tk.log.jsonl");
    options_ = base;
    server_ = std::make_unique<TimekeeperServer>(options_);
    server_->start();
  }
  ~LocalTimekeeper() { server_->stop(); }

  std::unique_ptr<Client> connect(Role role, ClientOptions opts = {}) {
    return Client::connect(options_.request_endpoint,
                           options_.broadcast_endpoint, role, opts);
  }

  const TimekeeperOptions& options() const { return options_; }
  TimekeeperServer& server() { return *server_; }
  const TempDir& dir() const { return dir_; }

 private:
  TempDir dir_;
  TimekeeperOptions options_;
  std::unique_ptr<TimekeeperServer> server_;
};

}  // namespace timewarp::testing
