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
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bfkit {

// ---------------------------------------------------------------------------
// Pareto attribution of BF to experimental factors.

struct FactorRow {
  std::map<std::string, std::string> levels;  // factor -> level
  double bf = 1.0;
};

struct FactorTable {
  std::vector<FactorRow> rows;
  std::map<std::string, std::vector<std::string>> factor_domains;
};

struct ParetoReport {
  std::map<std::string, double> raw_impacts;
  std::map<std::string, double> normalized;  // sums to 1 unless every impact is 0
};

enum class ParetoMode {
  // Level means over every row with that level.
  kMarginal,
  // Level means within each cell of the other factors, averaged over the
  // cells where every level of the factor is present.
  kMatched,
};

// Mean absolute pairwise difference between level means, over ordered pairs
// of distinct levels, normalized across factors.
ParetoReport pareto_impacts(const FactorTable& table, ParetoMode mode = ParetoMode::kMarginal);

// ---------------------------------------------------------------------------
// Majority@K bootstrap.

struct VoteInstance {
  std::string id;
  std::string gold;
  std::vector<std::string> answers;
};

struct MajorityStat {
  double mean_accuracy = 0.0;
  double std = 0.0;  // population std over trials
};

// Each trial draws `samples_per_trial` answers with replacement per instance;
// Majority@K votes over the first K draws, ties going to the modal answer
// seen first.
std::map<int, MajorityStat> majority_at_k_std(std::span<const VoteInstance> pool,
                                              std::span<const int> ks, int trials = 100,
                                              int samples_per_trial = 64,
                                              std::uint64_t seed = 0);

// Modal answer of `votes`, first-seen among ties.
std::string majority_vote(std::span<const std::string> votes);

// ---------------------------------------------------------------------------
// Scalar diagnostics.

// 100 * (acc(default) - acc(min)) / acc(default).
double relative_drop(const std::map<std::string, double>& grid, const std::string& default_config,
                     const std::string& min_config);

// Unique n-grams over total n-gram occurrences across all texts.
double distinct_n(std::span<const std::vector<std::string>> texts, int n);

// Mean of the ceil(K% * n) smallest logprobs.
double min_k_percent(std::span<const double> token_logprobs, double k_percent = 20.0);

// sign(OLS slope) * R^2 of ys regressed on xs.
double signed_r2(std::span<const double> xs, std::span<const double> ys);

// Pearson correlation of average ranks.
double spearman(std::span<const double> xs, std::span<const double> ys);

std::vector<double> average_ranks(std::span<const double> values);

}  // namespace bfkit
