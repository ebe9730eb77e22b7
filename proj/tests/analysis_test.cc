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

#include "bfkit/analysis.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bfkit/error.hpp"

namespace bfkit {
namespace {

FactorTable AtTable(double base, double instruct) {
  FactorTable t;
  t.factor_domains["AT"] = {"base", "instruct"};
  t.rows.push_back({{{"AT", "base"}}, base});
  t.rows.push_back({{{"AT", "instruct"}}, instruct});
  return t;
}

FactorTable TwoFactorTable(double scale) {
  FactorTable t;
  t.factor_domains["AT"] = {"base", "instruct"};
  t.factor_domains["S"] = {"small", "large"};
  const double bf[2][2] = {{12.0, 11.0}, {1.5, 1.2}};
  const char* at[] = {"base", "instruct"};
  const char* s[] = {"small", "large"};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) t.rows.push_back({{{"AT", at[i]}, {"S", s[j]}}, scale * bf[i][j]});
  }
  return t;
}

TEST(Pareto, TwoLevelImpactIsAbsoluteGap) {
  const auto r = pareto_impacts(AtTable(12.0, 1.2));
  EXPECT_NEAR(r.raw_impacts.at("AT"), 10.8, 1e-9);
  EXPECT_NEAR(r.normalized.at("AT"), 1.0, 1e-12);
}

TEST(Pareto, ThreeLevelsAverageOrderedPairs) {
  FactorTable t;
  t.factor_domains["G"] = {"a", "b", "c"};
  t.rows = {{{{"G", "a"}}, 1.0}, {{{"G", "b"}}, 2.0}, {{{"G", "c"}}, 4.0}};
  // |1-2| + |1-4| + |2-4| = 6, doubled over ordered pairs, / (3 * 2).
  EXPECT_NEAR(pareto_impacts(t).raw_impacts.at("G"), 2.0, 1e-12);
}

TEST(Pareto, EqualImpactsSplitEvenly) {
  FactorTable t;
  t.factor_domains["A"] = {"x", "y"};
  t.factor_domains["B"] = {"u", "v"};
  t.rows = {{{{"A", "x"}, {"B", "u"}}, 1.0},
            {{{"A", "x"}, {"B", "v"}}, 3.0},
            {{{"A", "y"}, {"B", "u"}}, 3.0},
            {{{"A", "y"}, {"B", "v"}}, 5.0}};
  const auto r = pareto_impacts(t);
  EXPECT_NEAR(r.normalized.at("A"), 0.5, 1e-12);
  EXPECT_NEAR(r.normalized.at("B"), 0.5, 1e-12);
}

TEST(Pareto, FlatFactorHasZeroImpact) {
  FactorTable t;
  t.factor_domains["AT"] = {"base", "instruct"};
  t.factor_domains["S"] = {"small", "large"};
  t.rows = {{{{"AT", "base"}, {"S", "small"}}, 10.0},
            {{{"AT", "base"}, {"S", "large"}}, 10.0},
            {{{"AT", "instruct"}, {"S", "small"}}, 2.0},
            {{{"AT", "instruct"}, {"S", "large"}}, 2.0}};
  const auto r = pareto_impacts(t);
  EXPECT_EQ(r.raw_impacts.at("S"), 0.0);
  EXPECT_EQ(r.normalized.at("S"), 0.0);
}

TEST(Pareto, SingleLevelFactorIsZeroNotError) {
  FactorTable t = AtTable(12.0, 1.2);
  t.factor_domains["S"] = {"large"};
  for (auto& row : t.rows) row.levels["S"] = "large";
  EXPECT_EQ(pareto_impacts(t).raw_impacts.at("S"), 0.0);
}

TEST(Pareto, EmptyTableIsAnError) { EXPECT_THROW(pareto_impacts(FactorTable{}), Error); }

TEST(Pareto, NormalizedSumsToOneAndIsScaleInvariant) {
  const auto a = pareto_impacts(TwoFactorTable(1.0));
  const auto b = pareto_impacts(TwoFactorTable(3.0));
  double sum = 0.0;
  for (const auto& [f, v] : a.normalized) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  for (const auto& [f, v] : a.raw_impacts) {
    EXPECT_NEAR(b.raw_impacts.at(f), 3.0 * v, 1e-9);
    EXPECT_NEAR(b.normalized.at(f), a.normalized.at(f), 1e-12);
  }
  EXPECT_GT(a.normalized.at("AT"), a.normalized.at("S"));
}

TEST(Pareto, MatchedModeComparesWithinSettings) {
  // Unbalanced design: marginal means mix S, matched pairs hold S fixed.
  FactorTable t;
  t.factor_domains["AT"] = {"base", "instruct"};
  t.factor_domains["S"] = {"small", "large"};
  t.rows = {{{{"AT", "base"}, {"S", "small"}}, 4.0},
            {{{"AT", "base"}, {"S", "large"}}, 8.0},
            {{{"AT", "base"}, {"S", "large"}}, 8.0},
            {{{"AT", "instruct"}, {"S", "small"}}, 2.0},
            {{{"AT", "instruct"}, {"S", "large"}}, 6.0}};
  const auto matched = pareto_impacts(t, ParetoMode::kMatched);
  EXPECT_NEAR(matched.raw_impacts.at("AT"), 2.0, 1e-12);
  const auto marginal = pareto_impacts(t, ParetoMode::kMarginal);
  EXPECT_NEAR(marginal.raw_impacts.at("AT"), 20.0 / 3.0 - 4.0, 1e-12);
}

TEST(MajorityVote, FirstSeenModalAnswerWinsTies) {
  const std::vector<std::string> tie{"A", "B", "B", "A"};
  EXPECT_EQ(majority_vote(tie), "A");
  const std::vector<std::string> clear{"A", "A", "B"};
  EXPECT_EQ(majority_vote(clear), "A");
  const std::vector<std::string> late{"C", "B", "B"};
  EXPECT_EQ(majority_vote(late), "B");
}

TEST(MajorityAtK, ConstantCorrectPoolsHaveZeroStd) {
  const std::vector<VoteInstance> pool{{"q1", "A", {"A", "A", "A"}}, {"q2", "7", {"7"}}};
  const std::vector<int> ks{1, 3, 8, 16};
  for (const auto& [k, s] : majority_at_k_std(pool, ks, 100, 64, 0)) {
    EXPECT_EQ(s.mean_accuracy, 1.0) << k;
    EXPECT_EQ(s.std, 0.0) << k;
  }
}

TEST(MajorityAtK, BernoulliSingleInstanceStd) {
  const std::vector<VoteInstance> pool{{"q", "A", {"A", "B"}}};
  const std::vector<int> ks{1};
  const auto r = majority_at_k_std(pool, ks, 10000, 64, 0);
  EXPECT_NEAR(r.at(1).std, 0.5, 0.02);
  EXPECT_NEAR(r.at(1).mean_accuracy, 0.5, 0.02);
}

TEST(MajorityAtK, FullDrawOfConstantPoolIsDeterministic) {
  const std::vector<VoteInstance> pool{{"q", "A", {"B", "B"}}};
  const std::vector<int> ks{64};
  const auto r = majority_at_k_std(pool, ks, 20, 64, 1);
  EXPECT_EQ(r.at(64).std, 0.0);
  EXPECT_EQ(r.at(64).mean_accuracy, 0.0);
}

TEST(MajorityAtK, SameSeedSameResult) {
  const std::vector<VoteInstance> pool{{"a", "x", {"x", "y", "z"}}, {"b", "y", {"x", "y"}}};
  const std::vector<int> ks{1, 3, 5};
  const auto r1 = majority_at_k_std(pool, ks, 50, 16, 7);
  const auto r2 = majority_at_k_std(pool, ks, 50, 16, 7);
  for (int k : ks) {
    EXPECT_EQ(r1.at(k).mean_accuracy, r2.at(k).mean_accuracy);
    EXPECT_EQ(r1.at(k).std, r2.at(k).std);
  }
}

TEST(MajorityAtK, KAboveSamplesPerTrialIsAnError) {
  const std::vector<VoteInstance> pool{{"a", "x", {"x"}}};
  const std::vector<int> ks{65};
  EXPECT_THROW(majority_at_k_std(pool, ks, 10, 64, 0), ParameterError);
}

TEST(RelativeDrop, TableArithmetic) {
  EXPECT_NEAR(relative_drop({{"default", 78.50}, {"min", 75.90}}, "default", "min"), 3.31, 0.01);
  EXPECT_NEAR(relative_drop({{"default", 54.00}, {"min", 37.00}}, "default", "min"), 31.48, 0.01);
  EXPECT_EQ(relative_drop({{"d", 50.0}, {"m", 50.0}}, "d", "m"), 0.0);
}

TEST(RelativeDrop, Errors) {
  EXPECT_THROW(relative_drop({{"d", 0.0}, {"m", 1.0}}, "d", "m"), EstimationError);
  EXPECT_THROW(relative_drop({{"d", 1.0}}, "d", "m"), Error);
}

TEST(DistinctN, Examples) {
  const std::vector<std::vector<std::string>> abab{{"a", "b", "a", "b"}};
  EXPECT_EQ(distinct_n(abab, 1), 0.5);
  EXPECT_EQ(distinct_n(abab, 2), 2.0 / 3.0);
  const std::vector<std::vector<std::string>> unique{{"a", "b", "c", "d"}};
  EXPECT_EQ(distinct_n(unique, 1), 1.0);
}

TEST(DistinctN, DuplicatingCorpusHalvesAllUniqueScore) {
  std::vector<std::vector<std::string>> corpus{{"a", "b", "c"}, {"d", "e"}};
  EXPECT_EQ(distinct_n(corpus, 1), 1.0);
  const auto copy = corpus;
  corpus.insert(corpus.end(), copy.begin(), copy.end());
  EXPECT_EQ(distinct_n(corpus, 1), 0.5);
}

TEST(DistinctN, Errors) {
  const std::vector<std::vector<std::string>> shorty{{"a"}};
  EXPECT_THROW(distinct_n(shorty, 2), EstimationError);
  EXPECT_THROW(distinct_n(shorty, 0), ParameterError);
}

TEST(MinKPercent, Examples) {
  const std::vector<double> five{-1, -2, -3, -4, -5};
  EXPECT_EQ(min_k_percent(five, 20), -5.0);
  EXPECT_EQ(min_k_percent(five, 100), -3.0);
  EXPECT_EQ(min_k_percent(five, 40), -4.5);
  const std::vector<double> flat{-2, -2, -2};
  EXPECT_EQ(min_k_percent(flat, 20), -2.0);
  EXPECT_THROW(min_k_percent({}, 20), Error);
}

TEST(MinKPercent, TranslationCovariant) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-10, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(23), shifted(23);
    const double c = -u(gen) / 2;
    for (int i = 0; i < 23; ++i) shifted[i] = (xs[i] = u(gen)) - c;
    EXPECT_NEAR(min_k_percent(shifted, 20), min_k_percent(xs, 20) - c, 1e-9);
  }
}

TEST(SignedR2, ExactLines) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  std::vector<double> up, down;
  for (double x : xs) {
    up.push_back(2 * x + 1);
    down.push_back(-x);
  }
  EXPECT_NEAR(signed_r2(xs, up), 1.0, 1e-9);
  EXPECT_NEAR(signed_r2(xs, down), -1.0, 1e-9);
}

TEST(SignedR2, IndependentNoiseIsNearZero) {
  std::mt19937_64 gen(42);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> xs(1000), ys(1000);
  for (int i = 0; i < 1000; ++i) {
    xs[i] = n(gen);
    ys[i] = n(gen);
  }
  EXPECT_LT(std::abs(signed_r2(xs, ys)), 0.05);
}

TEST(SignedR2, DegenerateXsIsAnError) {
  const std::vector<double> xs{1, 1, 1};
  const std::vector<double> ys{1, 2, 3};
  EXPECT_THROW(signed_r2(xs, ys), EstimationError);
}

TEST(Spearman, Examples) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const std::vector<double> cubes{1, 8, 27, 64, 125};
  const std::vector<double> rev{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(xs, cubes), 1.0, 1e-12);
  EXPECT_NEAR(spearman(xs, rev), -1.0, 1e-12);
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> b{1, 1, 2};
  EXPECT_NEAR(spearman(a, b), 0.866025, 1e-6);
}

TEST(Spearman, Errors) {
  const std::vector<double> flat{2, 2, 2};
  const std::vector<double> xs{1, 2, 3};
  EXPECT_THROW(spearman(xs, flat), EstimationError);
  const std::vector<double> two{1, 2};
  EXPECT_THROW(spearman(two, two), Error);
}

TEST(AverageRanks, TiesShareMeanRank) {
  const std::vector<double> v{10, 20, 10, 30};
  const std::vector<double> expected{1.5, 3, 1.5, 4};
  EXPECT_EQ(average_ranks(v), expected);
}

}  // namespace
}  // namespace bfkit
