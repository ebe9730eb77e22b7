// Copyright 2026 The bfkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bfkit/trace.hpp"

namespace bfkit {

enum class Estimator { kEntropy, kNll };

const char* to_string(Estimator estimator);
Estimator estimator_from_string(const std::string& text);

// How per-trace values combine into one BF. kGeometric is exp(mean of
// per-trace values); kArithmetic is mean(exp(per-trace values)) and exists
// for sensitivity analysis.
enum class Aggregation { kGeometric, kArithmetic };

enum class DegradedPolicy { kThrow, kExcludeTrace };

struct BfOptions {
  Aggregation aggregation = Aggregation::kGeometric;
  // Only consulted by bf_nll; the entropy estimator always drops degraded
  // steps and reports them.
  DegradedPolicy on_degraded = DegradedPolicy::kThrow;
};

struct BfEstimate {
  double value = 1.0;
  Estimator estimator = Estimator::kEntropy;
  int n_sequences = 0;
  double mean_seq_length = 0.0;
  // Length-averaged entropy or NLL per included trace, in nats.
  std::vector<double> per_sequence_values;
  double coverage_summary = 1.0;  // mean coverage_mass over included steps
  int degraded_steps = 0;
  int total_steps = 0;
  int excluded_traces = 0;

  double exclusion_ratio() const {
    return total_steps == 0 ? 0.0 : static_cast<double>(degraded_steps) / total_steps;
  }
};

// exp of the mean, over traces, of the per-token truncated entropy.
BfEstimate bf_entropy(std::span<const SequenceTrace> traces, const DecodingParams& params,
                      const BfOptions& options = {});

// exp of the mean, over traces, of the length-averaged negative
// log-likelihood of the sampled tokens.
BfEstimate bf_nll(std::span<const SequenceTrace> traces, const DecodingParams& params,
                  const BfOptions& options = {});

BfEstimate estimate_bf(Estimator estimator, std::span<const SequenceTrace> traces,
                       const DecodingParams& params, const BfOptions& options = {});

// Weighted mean of instance-level BF. Uniform weights when none are given.
double bf_task(std::span<const std::pair<PromptCase, BfEstimate>> instances,
               const std::optional<std::map<std::string, double>>& weights = std::nullopt);

struct TrajectoryPoint {
  int window_start = 1;
  int window_len = 5;
  double bf_raw = 1.0;
  double bf_ema = 1.0;
  int n_steps = 0;
};

// Windowed BF over output positions, pooling every trace that reaches each
// window. Windows align to position 1; the final partial window is kept and
// empty windows are omitted.
std::vector<TrajectoryPoint> bf_trajectory(std::span<const SequenceTrace> traces,
                                           const DecodingParams& params, int window_len = 5,
                                           Estimator estimator = Estimator::kEntropy,
                                           double alpha = 0.1);

// Exponential moving average, s_1 = x_1.
std::vector<double> ema(std::span<const double> series, double alpha = 0.1);

struct DispersionPoint {
  int length = 0;
  double nll_std = 0.0;       // population std of prefix NLL / N across traces
  double mean_abs_gap = 0.0;  // mean |prefix NLL / N - prefix entropy / N|
  int n_traces = 0;
  int n_excluded = 0;  // too short, or degraded within the prefix
};

std::vector<DispersionPoint> nll_dispersion_curve(std::span<const SequenceTrace> traces,
                                                  const DecodingParams& params,
                                                  std::span<const int> checkpoints);

// Number of degraded steps in `traces` under `params`.
int count_degraded_steps(std::span<const SequenceTrace> traces, const DecodingParams& params);

}  // namespace bfkit
