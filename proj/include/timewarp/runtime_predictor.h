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

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "timewarp/time_core.h"

namespace timewarp {

struct PrefillChunk {
  std::string request_id;
  int64_t chunk_tokens = 0;
  int64_t context_len_before = 0;

  bool operator==(const PrefillChunk&) const = default;
};

struct DecodeEntry {
  std::string request_id;
  int64_t context_len = 0;

  bool operator==(const DecodeEntry&) const = default;
};

struct BatchComposition {
  std::vector<PrefillChunk> prefill_chunks;
  std::vector<DecodeEntry> decodes;

  bool empty() const { return prefill_chunks.empty() && decodes.empty(); }
  int64_t total_prefill_tokens() const;
  int64_t num_decodes() const { return static_cast<int64_t>(decodes.size()); }
  // Prefill tokens plus one token per decode.
  int64_t total_tokens() const;
  // Throws std::invalid_argument on non-positive chunks or negative contexts.
  void validate() const;

  bool operator==(const BatchComposition&) const = default;
};

void to_json(nlohmann::json& j, const BatchComposition& b);
void from_json(const nlohmann::json& j, BatchComposition& b);

struct HardwareSpec {
  std::string name = "reference";
  std::map<std::string, double> parameters;
};

void to_json(nlohmann::json& j, const HardwareSpec& hw);
void from_json(const nlohmann::json& j, HardwareSpec& hw);

// Rounds to whole microseconds, never below 1us.
Nanos quantize_to_us(double ns);

// Immutable after construction; predict() is pure.
class RuntimePredictor {
 public:
  virtual ~RuntimePredictor() = default;

  // Throws Error(kEmptyBatch) for an empty batch.
  Nanos predict(const BatchComposition& batch, const HardwareSpec& hw) const;

  virtual std::string name() const = 0;

 protected:
  virtual double predict_ns(const BatchComposition& batch,
                            const HardwareSpec& hw) const = 0;
};

class ConstantPredictor : public RuntimePredictor {
 public:
  explicit ConstantPredictor(Nanos duration);
  std::string name() const override { return "constant"; }

 protected:
  double predict_ns(const BatchComposition&,
                    const HardwareSpec&) const override;

 private:
  Nanos duration_;
};

struct LinearCoefficients {
  Nanos base{0};
  double per_prefill_token_ns = 0;
  double per_decode_ns = 0;
  double per_context_token_ns = 0;
};

// base + k_p * sum(chunk) + k_d * |decodes| + k_ctx * sum(all contexts).
class LinearPredictor : public RuntimePredictor {
 public:
  // Negative coefficients are rejected so the model stays monotone.
  explicit LinearPredictor(LinearCoefficients coefficients);
  std::string name() const override { return "linear"; }

 protected:
  double predict_ns(const BatchComposition& batch,
                    const HardwareSpec&) const override;

 private:
  LinearCoefficients k_;
};

struct TableRow {
  int64_t total_prefill_tokens = 0;
  int64_t num_decodes = 0;
  double duration_us = 0;
};

// Profiled durations keyed by (total prefill tokens, decode count). Exact
// keys are answered verbatim; inside the grid the value is interpolated
// (bilinear when all four corners exist, linear along an axis when the other
// coordinate is an exact key, nearest neighbour otherwise). Queries outside
// the profiled range are clamped when extrapolation is allowed and raise
// TableMiss when it is not.
class TablePredictor : public RuntimePredictor {
 public:
  TablePredictor(std::vector<TableRow> rows, bool allow_extrapolation);
  std::string name() const override { return "table"; }

  const std::vector<TableRow>& rows() const { return rows_; }

 protected:
  double predict_ns(const BatchComposition& batch,
                    const HardwareSpec&) const override;

 private:
  const double* find(int64_t p, int64_t d) const;
  double lookup_us(int64_t p, int64_t d) const;

  std::vector<TableRow> rows_;  // sorted by key, unique
  std::vector<int64_t> prefill_keys_;
  std::vector<int64_t> decode_keys_;
  bool allow_extrapolation_;
};

// CSV with header total_prefill_tokens,num_decodes,duration_us. Duplicate
// keys keep the last row and log a warning.
std::unique_ptr<TablePredictor> load_table(const std::string& path,
                                           bool allow_extrapolation = true);
std::unique_ptr<TablePredictor> parse_table(const std::string& csv,
                                            bool allow_extrapolation = true);

// {"kind": "constant", "duration_us": 20000}
// {"kind": "linear", "base_us":..., "per_prefill_token_us":...,
//  "per_decode_us":..., "per_context_token_us":...}
// {"kind": "table", "path": "...", "extrapolate": true}
std::unique_ptr<RuntimePredictor> make_predictor(const nlohmann::json& config);

}  // namespace timewarp
