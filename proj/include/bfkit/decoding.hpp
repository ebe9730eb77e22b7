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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bfkit/trace.hpp"

namespace bfkit {

struct TokenProb {
  std::int64_t token_id = 0;
  double prob = 0.0;
  double logprob = 0.0;  // log(prob), kept exactly rather than recomputed
};

// The renormalized sampling distribution after temperature and nucleus
// truncation.
struct TruncatedDistribution {
  std::vector<TokenProb> support;  // descending prob, ties by ascending id
  DecodingParams source_params;
  // Mass the support had under the pre-truncation distribution.
  double pre_truncation_mass = 0.0;

  const TokenProb* find(std::int64_t token_id) const;
};

// Rescales logprobs by 1/T and renormalizes over the given support. The
// result is re-sorted into canonical order.
std::vector<CandidateLogprob> apply_temperature(std::span<const CandidateLogprob> candidates,
                                                double temperature);

// Keeps the shortest canonical-order prefix whose cumulative pre-truncation
// probability reaches p (all candidates when they never reach it), then
// renormalizes.
TruncatedDistribution nucleus_truncate(std::span<const CandidateLogprob> candidates, double p);

// Shannon entropy in nats, with 0 log 0 = 0.
double truncated_entropy(const TruncatedDistribution& dist);

enum class StepStatus {
  kOk,
  kChosenMissing,     // chosen token not among the recorded candidates
  kOutsideSupport,    // chosen token present but cut by the nucleus
};

struct StepResult {
  TruncatedDistribution dist;
  double entropy = 0.0;
  StepStatus status = StepStatus::kOk;
  // log P~(chosen); set only when status is kOk.
  std::optional<double> chosen_logprob;

  bool degraded() const { return status != StepStatus::kOk; }
};

// Temperature (unless the producer already applied it), then nucleus, then
// entropy and the chosen token's truncated logprob.
StepResult step_pipeline(const TokenStep& step, const DecodingParams& params);

}  // namespace bfkit
