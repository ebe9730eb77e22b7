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

#include "bfkit/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bfkit/bf.hpp"
#include "bfkit/error.hpp"

namespace bfkit {
namespace {

SyntheticProcess TwoEight() {
  return SyntheticProcess::schedule({std::vector<double>(2, 0.5), std::vector<double>(8, 0.125)});
}

TEST(TrueEntropyRate, FairDie) {
  const auto die = SyntheticProcess::uniform(6);
  for (int n : {1, 7, 400}) EXPECT_NEAR(true_entropy_rate(die, n), 1.791759469228055, 1e-12);
}

TEST(TrueEntropyRate, AlternatingSchedule) {
  EXPECT_NEAR(true_entropy_rate(TwoEight(), 2), std::log(4.0), 1e-12);
  // Odd lengths carry one extra uniform-2 step: (2 ln2 + ln8) / 3.
  EXPECT_NEAR(true_entropy_rate(TwoEight(), 3), 5.0 * std::log(2.0) / 3.0, 1e-12);
}

TEST(TrueEntropyRate, DeterministicMarkovIsZero) {
  const auto p = SyntheticProcess::markov({1.0, 0.0}, {{0.0, 1.0}, {1.0, 0.0}});
  EXPECT_EQ(true_entropy_rate(p, 10), 0.0);
}

TEST(TrueEntropyRate, MarkovUsesExactMarginals) {
  // Step 1: H=0. Step 2 from state 0: ln2. Step 3: marginal [0.5, 0.5] -> 0.5 ln2.
  const auto p = SyntheticProcess::markov({1.0, 0.0}, {{0.5, 0.5}, {0.0, 1.0}});
  EXPECT_NEAR(true_entropy_rate(p, 3), 0.5 * std::log(2.0), 1e-12);
}

TEST(SyntheticProcess, RejectsBadDistributions) {
  EXPECT_THROW(SyntheticProcess::iid({0.5, 0.4}), ParameterError);
  EXPECT_THROW(SyntheticProcess::iid({1.2, -0.2}), ParameterError);
  EXPECT_THROW(SyntheticProcess::markov({1.0}, {{0.5, 0.5}}), ParameterError);
  EXPECT_THROW(SyntheticProcess::uniform(0), ParameterError);
}

TEST(SyntheticProcess, JsonRoundTrip) {
  const auto p = SyntheticProcess::markov({0.3, 0.7}, {{0.9, 0.1}, {0.2, 0.8}});
  const auto q = SyntheticProcess::from_json(p.to_json());
  EXPECT_EQ(q.to_json(), p.to_json());
  const auto u = SyntheticProcess::from_json(nlohmann::ordered_json::parse(R"({"kind":"iid","uniform":6})"));
  EXPECT_NEAR(true_entropy_rate(u, 1), std::log(6.0), 1e-12);
  EXPECT_THROW(SyntheticProcess::from_json(nlohmann::ordered_json::parse(R"({"kind":"zipf"})")),
               ParameterError);
}

TEST(SyntheticProcess, MaxSurprisal) {
  EXPECT_NEAR(SyntheticProcess::uniform(6).max_surprisal(), std::log(6.0), 1e-12);
  EXPECT_NEAR(SyntheticProcess::iid({0.75, 0.25}).max_surprisal(), std::log(4.0), 1e-12);
}

TEST(SampleTraces, ShapeAndExactLogprobs) {
  const auto traces = sample_traces(SyntheticProcess::iid({0.5, 0.25, 0.25}), 12, 4, 3);
  ASSERT_EQ(traces.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(traces[i].sample_index, i);
    ASSERT_EQ(traces[i].steps.size(), 12u);
    EXPECT_TRUE(validate_trace(traces[i]).empty());
    for (const auto& s : traces[i].steps) {
      ASSERT_EQ(s.candidates.size(), 3u);
      EXPECT_EQ(s.candidates[0].logprob_raw, std::log(0.5));
      EXPECT_NE(s.find_candidate(s.chosen_token_id), nullptr);
    }
  }
}

TEST(SampleTraces, DeterministicProcessGivesIdenticalTraces) {
  const auto p = SyntheticProcess::iid({1.0});
  const auto traces = sample_traces(p, 5, 3, 0);
  for (const auto& t : traces) {
    EXPECT_EQ(t.steps, traces[0].steps);
    for (const auto& s : t.steps) EXPECT_EQ(s.find_candidate(s.chosen_token_id)->logprob_raw, 0.0);
  }
}

TEST(SampleTraces, SameSeedSameTraces) {
  const auto die = SyntheticProcess::uniform(6);
  EXPECT_EQ(sample_traces(die, 50, 5, 9), sample_traces(die, 50, 5, 9));
  EXPECT_NE(sample_traces(die, 50, 5, 9), sample_traces(die, 50, 5, 10));
}

TEST(SampleTraces, GrowingMKeepsEarlierTraces) {
  const auto die = SyntheticProcess::uniform(6);
  const auto small = sample_traces(die, 20, 3, 4);
  const auto large = sample_traces(die, 20, 8, 4);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(small[i], large[i]);
}

TEST(SampleTraces, EmpiricalFrequenciesMatch) {
  const auto traces = sample_traces(SyntheticProcess::iid({0.7, 0.2, 0.1}), 1000, 20, 5);
  std::vector<double> counts(3, 0.0);
  for (const auto& t : traces) {
    for (const auto& s : t.steps) counts[s.chosen_token_id] += 1.0;
  }
  EXPECT_NEAR(counts[0] / 20000, 0.7, 0.01);
  EXPECT_NEAR(counts[1] / 20000, 0.2, 0.01);
  EXPECT_NEAR(counts[2] / 20000, 0.1, 0.01);
}

TEST(Recovery, FairDieNll) {
  const auto traces = sample_traces(SyntheticProcess::uniform(6), 400, 50, 0);
  const double bf = bf_nll(traces, DecodingParams{}).value;
  EXPECT_GE(bf, 5.8);
  EXPECT_LE(bf, 6.2);
}

TEST(Recovery, EntropyEqualsMeanSampledStepEntropy) {
  const auto p = SyntheticProcess::markov({0.5, 0.5}, {{0.9, 0.1}, {0.5, 0.5}});
  const auto traces = sample_traces(p, 30, 20, 2);
  double total = 0.0;
  for (const auto& t : traces) {
    double h = 0.0;
    for (const auto& s : t.steps) {
      for (const auto& c : s.candidates) h -= std::exp(c.logprob_raw) * c.logprob_raw;
    }
    total += h / t.steps.size();
  }
  EXPECT_NEAR(bf_entropy(traces, DecodingParams{}).value, std::exp(total / traces.size()), 1e-9);
}

TEST(Recovery, MarkovErrorShrinksWithM) {
  const auto p = SyntheticProcess::markov({0.5, 0.5}, {{0.9, 0.1}, {0.5, 0.5}});
  const double target = std::exp(true_entropy_rate(p, 50));
  double last = INFINITY;
  for (int m : {10, 100, 1000}) {
    const double err =
        std::abs(bf_entropy(sample_traces(p, 50, m, 0), DecodingParams{}).value - target);
    EXPECT_LE(err, last) << "M=" << m;
    last = err;
  }
  EXPECT_LT(last, 0.01);
}

TEST(AepVerify, DeterministicProcess) {
  const std::vector<int> checkpoints{10, 40};
  const auto r = aep_verify(SyntheticProcess::iid({1.0}), checkpoints, 50, 0.1, 0);
  for (const auto& c : r.checkpoints) {
    EXPECT_EQ(c.violation_rate, 0.0);
    EXPECT_EQ(c.var_logp, 0.0);
  }
  EXPECT_TRUE(r.all_ok());
}

TEST(AepVerify, SkewedIidSatisfiesBounds) {
  const std::vector<int> checkpoints{100, 400};
  const auto r = aep_verify(SyntheticProcess::iid({0.6, 0.3, 0.1}), checkpoints, 500, 0.1, 0);
  ASSERT_EQ(r.checkpoints.size(), 2u);
  EXPECT_LE(r.checkpoints[1].violation_rate, r.checkpoints[0].violation_rate);
  for (const auto& c : r.checkpoints) {
    const double b = std::min(c.chebyshev_bound, 1.0);
    EXPECT_LE(c.violation_rate, c.chebyshev_bound + 3.0 * std::sqrt(b * (1 - b) / 500));
    EXPECT_LE(c.var_logp, c.length * std::pow(std::log(10.0), 2));
  }
  EXPECT_TRUE(r.all_ok());
}

TEST(AepVerify, NonStationaryScheduleConcentrates) {
  const std::vector<int> checkpoints{20, 400};
  const auto skewed = SyntheticProcess::schedule({{0.9, 0.1}, std::vector<double>(8, 0.125)});
  const auto r = aep_verify(skewed, checkpoints, 500, 0.1, 0);
  EXPECT_LE(r.checkpoints[1].violation_rate, r.checkpoints[0].violation_rate);
  EXPECT_LT(r.checkpoints[1].violation_rate, 0.05);
  EXPECT_TRUE(r.trend_ok);
}

TEST(AepVerify, EpsilonOutOfRange) {
  const std::vector<int> checkpoints{10};
  EXPECT_THROW(aep_verify(TwoEight(), checkpoints, 10, 0.0, 0), ParameterError);
  EXPECT_THROW(aep_verify(TwoEight(), checkpoints, 10, 1.0, 0), ParameterError);
}

}  // namespace
}  // namespace bfkit
