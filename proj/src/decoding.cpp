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

#include "bfkit/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bfkit/error.hpp"
#include "bfkit/kernels.hpp"

namespace bfkit {

namespace {

// Slack on the cumulative-mass comparison so that a prefix whose mass equals
// p up to rounding (0.9 stored as exp(log 0.9)) still terminates the nucleus.
constexpr double kNucleusSlack = 1e-12;

double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

}  // namespace

const TokenProb* TruncatedDistribution::find(std::int64_t token_id) const {
  for (const auto& t : support) {
    if (t.token_id == token_id) return &t;
  }
  return nullptr;
}

std::vector<CandidateLogprob> apply_temperature(std::span<const CandidateLogprob> candidates,
                                                double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be > 0");
  }
  if (candidates.empty()) throw ParameterError("apply_temperature: no candidates");

  std::vector<double> scaled(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scaled[i] = candidates[i].logprob_raw / temperature;
  }
  const double norm = log_sum_exp(scaled);
  std::vector<CandidateLogprob> out(candidates.begin(), candidates.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].logprob_raw = std::min(0.0, scaled[i] - norm);
  }
  sort_candidates(out);
  return out;
}

TruncatedDistribution nucleus_truncate(std::span<const CandidateLogprob> candidates, double p) {
  if (candidates.empty()) throw ParameterError("nucleus_truncate: no candidates");
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("nucleus p must be in (0, 1]");

  std::vector<CandidateLogprob> sorted(candidates.begin(), candidates.end());
  sort_candidates(sorted);

  std::size_t keep = sorted.size();
  if (p < 1.0) {
    double cumulative = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      cumulative += std::exp(sorted[i].logprob_raw);
      if (cumulative >= p - kNucleusSlack) {
        keep = i + 1;
        break;
      }
    }
  }

  std::vector<double> kept(keep);
  for (std::size_t i = 0; i < keep; ++i) kept[i] = sorted[i].logprob_raw;
  const double log_mass = log_sum_exp(kept);

  TruncatedDistribution dist;
  dist.source_params.nucleus_p = p;
  dist.pre_truncation_mass = std::exp(log_mass);
  dist.support.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const double lp = std::min(0.0, kept[i] - log_mass);
    const double prob = std::exp(lp);
    if (prob > 0.0) dist.support.push_back({sorted[i].token_id, prob, lp});
  }
  return dist;
}

double truncated_entropy(const TruncatedDistribution& dist) {
  std::vector<double> p(dist.support.size());
  std::vector<double> logp(dist.support.size());
  for (std::size_t i = 0; i < dist.support.size(); ++i) {
    p[i] = dist.support[i].prob;
    logp[i] = dist.support[i].logprob;
  }
  return std::max(0.0, kernels::entropy(p, logp));
}

StepResult step_pipeline(const TokenStep& step, const DecodingParams& params) {
  StepResult result;
  if (!step.temperature_applied && params.temperature != 1.0) {
    const auto scaled = apply_temperature(step.candidates, params.temperature);
    result.dist = nucleus_truncate(scaled, params.nucleus_p);
  } else {
    if (!(params.temperature > 0.0)) throw ParameterError("temperature must be > 0");
    result.dist = nucleus_truncate(step.candidates, params.nucleus_p);
  }
  result.dist.source_params = params;
  result.entropy = truncated_entropy(result.dist);

  if (step.find_candidate(step.chosen_token_id) == nullptr) {
    result.status = StepStatus::kChosenMissing;
  } else if (const TokenProb* chosen = result.dist.find(step.chosen_token_id)) {
    result.chosen_logprob = chosen->logprob;
  } else {
    result.status = StepStatus::kOutsideSupport;
  }
  return result;
}

}  // namespace bfkit
