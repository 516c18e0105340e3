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

#include "timewarp/runtime_predictor.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "timewarp/error.h"

namespace timewarp {

using nlohmann::json;

int64_t BatchComposition::total_prefill_tokens() const {
  int64_t total = 0;
  for (const auto& c : prefill_chunks) total += c.chunk_tokens;
  return total;
}

int64_t BatchComposition::total_tokens() const {
  return total_prefill_tokens() + num_decodes();
}

void BatchComposition::validate() const {
  for (const auto& c : prefill_chunks) {
    if (c.chunk_tokens < 1 || c.context_len_before < 0) {
      throw std::invalid_argument("bad prefill chunk for " + c.request_id);
    }
  }
  for (const auto& d : decodes) {
    if (d.context_len < 0) {
      throw std::invalid_argument("bad decode entry for " + d.request_id);
    }
  }
}

void to_json(json& j, const BatchComposition& b) {
  json chunks = json::array();
  for (const auto& c : b.prefill_chunks) {
    chunks.push_back({{"request_id", c.request_id},
                      {"chunk_tokens", c.chunk_tokens},
                      {"context_len_before", c.context_len_before}});
  }
  json decodes = json::array();
  for (const auto& d : b.decodes) {
    decodes.push_back(
        {{"request_id", d.request_id}, {"context_len", d.context_len}});
  }
  j = {{"prefill_chunks", std::move(chunks)}, {"decodes", std::move(decodes)}};
}

void from_json(const json& j, BatchComposition& b) {
  b = {};
  for (const auto& c : j.at("prefill_chunks")) {
    b.prefill_chunks.push_back({c.at("request_id").get<std::string>(),
                                c.at("chunk_tokens").get<int64_t>(),
                                c.at("context_len_before").get<int64_t>()});
  }
  for (const auto& d : j.at("decodes")) {
    b.decodes.push_back({d.at("request_id").get<std::string>(),
                         d.at("context_len").get<int64_t>()});
  }
}

void to_json(json& j, const HardwareSpec& hw) {
  j = {{"name", hw.name}, {"parameters", hw.parameters}};
}

void from_json(const json& j, HardwareSpec& hw) {
  hw.name = j.value("name", std::string("reference"));
  hw.parameters = j.value("parameters", std::map<std::string, double>{});
  if (hw.name.empty()) {
    throw Error(ErrorCode::kConfigError, "hardware name must be non-empty");
  }
}

Nanos quantize_to_us(double ns) {
  double us = std::round(ns / 1000.0);
  if (!(us >= 1.0)) us = 1.0;  // also catches NaN
  return Nanos(static_cast<int64_t>(us) * 1000);
}

Nanos RuntimePredictor::predict(const BatchComposition& batch,
                                const HardwareSpec& hw) const {
  if (batch.empty()) {
    throw Error(ErrorCode::kEmptyBatch, "cannot predict an empty batch");
  }
  return quantize_to_us(predict_ns(batch, hw));
}

ConstantPredictor::ConstantPredictor(Nanos duration) : duration_(duration) {
  if (duration.count() <= 0) {
    throw Error(ErrorCode::kNegativeDuration,
                "constant duration must be positive");
  }
}

double ConstantPredictor::predict_ns(const BatchComposition&,
                                     const HardwareSpec&) const {
  return static_cast<double>(duration_.count());
}

LinearPredictor::LinearPredictor(LinearCoefficients coefficients)
    : k_(coefficients) {
  if (k_.base.count() < 0 || k_.per_prefill_token_ns < 0 ||
      k_.per_decode_ns < 0 || k_.per_context_token_ns < 0) {
    throw Error(ErrorCode::kConfigError,
                "linear predictor coefficients must be non-negative");
  }
}

double LinearPredictor::predict_ns(const BatchComposition& batch,
                                   const HardwareSpec&) const {
  double context = 0;
  for (const auto& c : batch.prefill_chunks) {
    context += static_cast<double>(c.context_len_before);
  }
  for (const auto& d : batch.decodes) {
    context += static_cast<double>(d.context_len);
  }
  return static_cast<double>(k_.base.count()) +
         k_.per_prefill_token_ns *
             static_cast<double>(batch.total_prefill_tokens()) +
         k_.per_decode_ns * static_cast<double>(batch.num_decodes()) +
         k_.per_context_token_ns * context;
}

TablePredictor::TablePredictor(std::vector<TableRow> rows,
                               bool allow_extrapolation)
    : allow_extrapolation_(allow_extrapolation) {
  if (rows.empty()) {
    throw Error(ErrorCode::kParseError, "runtime table has no rows");
  }
  // Stable sort keeps file order among equal keys so "last wins" holds.
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TableRow& a, const TableRow& b) {
                     return std::pair(a.total_prefill_tokens, a.num_decodes) <
                            std::pair(b.total_prefill_tokens, b.num_decodes);
                   });
  for (const auto& row : rows) {
    if (row.duration_us < 0) {
      throw Error(ErrorCode::kNegativeDuration,
                  "negative duration at (" +
                      std::to_string(row.total_prefill_tokens) + "," +
                      std::to_string(row.num_decodes) + ")");
    }
    if (!rows_.empty() &&
        rows_.back().total_prefill_tokens == row.total_prefill_tokens &&
        rows_.back().num_decodes == row.num_decodes) {
      spdlog::warn("runtime table: duplicate key ({}, {}); keeping last row",
                   row.total_prefill_tokens, row.num_decodes);
      rows_.back() = row;
      continue;
    }
    rows_.push_back(row);
  }
  for (const auto& row : rows_) {
    prefill_keys_.push_back(row.total_prefill_tokens);
    decode_keys_.push_back(row.num_decodes);
  }
  for (auto* keys : {&prefill_keys_, &decode_keys_}) {
    std::sort(keys->begin(), keys->end());
    keys->erase(std::unique(keys->begin(), keys->end()), keys->end());
  }
}

const double* TablePredictor::find(int64_t p, int64_t d) const {
  auto it = std::lower_bound(
      rows_.begin(), rows_.end(), std::pair(p, d),
      [](const TableRow& row, const std::pair<int64_t, int64_t>& key) {
        return std::pair(row.total_prefill_tokens, row.num_decodes) < key;
      });
  if (it != rows_.end() && it->total_prefill_tokens == p &&
      it->num_decodes == d) {
    return &it->duration_us;
  }
  return nullptr;
}

namespace {

// Bracketing keys around x in a sorted vector; x must lie inside the range.
std::pair<int64_t, int64_t> bracket(const std::vector<int64_t>& keys,
                                    int64_t x) {
  auto hi = std::lower_bound(keys.begin(), keys.end(), x);
  if (*hi == x) return {x, x};
  return {*(hi - 1), *hi};
}

double lerp(double a, double b, int64_t x0, int64_t x1, int64_t x) {
  if (x0 == x1) return a;
  double t = static_cast<double>(x - x0) / static_cast<double>(x1 - x0);
  return a + (b - a) * t;
}

}  // namespace

double TablePredictor::lookup_us(int64_t p, int64_t d) const {
  if (const double* exact = find(p, d)) return *exact;

  const bool outside = p < prefill_keys_.front() || p > prefill_keys_.back() ||
                       d < decode_keys_.front() || d > decode_keys_.back();
  if (outside) {
    if (!allow_extrapolation_) {
      throw Error(ErrorCode::kTableMiss,
                  "(" + std::to_string(p) + "," + std::to_string(d) +
                      ") is outside the profiled range");
    }
    p = std::clamp(p, prefill_keys_.front(), prefill_keys_.back());
    d = std::clamp(d, decode_keys_.front(), decode_keys_.back());
    if (const double* exact = find(p, d)) return *exact;
  }

  auto [p0, p1] = bracket(prefill_keys_, p);
  auto [d0, d1] = bracket(decode_keys_, d);
  const double* c00 = find(p0, d0);
  const double* c10 = find(p1, d0);
  const double* c01 = find(p0, d1);
  const double* c11 = find(p1, d1);
  if (c00 && c10 && c01 && c11) {
    return lerp(lerp(*c00, *c10, p0, p1, p), lerp(*c01, *c11, p0, p1, p), d0,
                d1, d);
  }
  if (p0 == p1 && c00 && c01) return lerp(*c00, *c01, d0, d1, d);
  if (d0 == d1 && c00 && c10) return lerp(*c00, *c10, p0, p1, p);

  const double p_span = std::max<double>(
      1.0, static_cast<double>(prefill_keys_.back() - prefill_keys_.front()));
  const double d_span = std::max<double>(
      1.0, static_cast<double>(decode_keys_.back() - decode_keys_.front()));
  double best = std::numeric_limits<double>::infinity();
  double value = rows_.front().duration_us;
  for (const auto& row : rows_) {
    double dp = static_cast<double>(row.total_prefill_tokens - p) / p_span;
    double dd = static_cast<double>(row.num_decodes - d) / d_span;
    double dist = dp * dp + dd * dd;
    if (dist < best) {
      best = dist;
      value = row.duration_us;
    }
  }
  return value;
}

double TablePredictor::predict_ns(const BatchComposition& batch,
                                  const HardwareSpec&) const {
  return lookup_us(batch.total_prefill_tokens(), batch.num_decodes()) * 1000.0;
}

std::unique_ptr<TablePredictor> parse_table(const std::string& csv,
                                            bool allow_extrapolation) {
  std::istringstream in(csv);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    return Error(ErrorCode::kParseError,
                 "runtime table line " + std::to_string(line_no) + ": " + why);
  };
  auto trim = [](std::string s) {
    auto first = s.find_first_not_of(" \t\r");
    auto last = s.find_last_not_of(" \t\r");
    return first == std::string::npos ? std::string()
                                      : s.substr(first, last - first + 1);
  };

  std::vector<TableRow> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!header_seen) {
      if (cells != std::vector<std::string>{"total_prefill_tokens",
                                            "num_decodes", "duration_us"}) {
        throw fail(
            "expected header total_prefill_tokens,num_decodes,duration_us");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 3) throw fail("expected 3 columns");
    TableRow row;
    try {
      size_t used = 0;
      row.total_prefill_tokens = std::stoll(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument(cells[0]);
      row.num_decodes = std::stoll(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument(cells[1]);
      row.duration_us = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument(cells[2]);
    } catch (const std::logic_error&) {
      throw fail("not a number in '" + line + "'");
    }
    if (row.total_prefill_tokens < 0 || row.num_decodes < 0) {
      throw fail("keys must be non-negative");
    }
    rows.push_back(row);
  }
  if (!header_seen) throw fail("missing header");
  return std::make_unique<TablePredictor>(std::move(rows),
                                          allow_extrapolation);
}

std::unique_ptr<TablePredictor> load_table(const std::string& path,
                                           bool allow_extrapolation) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str(), allow_extrapolation);
}

std::unique_ptr<RuntimePredictor> make_predictor(const json& config) {
  const std::string kind = config.value("kind", std::string("constant"));
  auto us = [&](const char* key) { return config.value(key, 0.0) * 1000.0; };
  if (kind == "constant") {
    if (!config.contains("duration_us")) {
      throw Error(ErrorCode::kConfigError,
                  "constant predictor needs duration_us");
    }
    if (config.at("duration_us").get<double>() <= 0) {
      throw Error(ErrorCode::kNegativeDuration,
                  "constant duration must be positive");
    }
    return std::make_unique<ConstantPredictor>(
        quantize_to_us(us("duration_us")));
  }
  if (kind == "linear") {
    LinearCoefficients k;
    k.base = Nanos(static_cast<int64_t>(std::llround(us("base_us"))));
    k.per_prefill_token_ns = us("per_prefill_token_us");
    k.per_decode_ns = us("per_decode_us");
    k.per_context_token_ns = us("per_context_token_us");
    return std::make_unique<LinearPredictor>(k);
  }
  if (kind == "table") {
    return load_table(config.at("path").get<std::string>(),
                      config.value("extrapolate", true));
  }
  throw Error(ErrorCode::kConfigError, "unknown predictor kind '" + kind + "'");
}

}  // namespace timewarp
