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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "bfkit/error.hpp"
#include "bfkit/kernels.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

namespace {

double mean_abs_pairwise(const std::vector<double>& level_means) {
  const std::size_t k = level_means.size();
  if (k < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) total += std::abs(level_means[i] - level_means[j]);
    }
  }
  return total / static_cast<double>(k * (k - 1));
}

std::vector<double> level_means(const std::vector<const FactorRow*>& rows,
                                const std::string& factor,
                                const std::vector<std::string>& levels, bool* complete) {
  std::vector<double> sums(levels.size(), 0.0);
  std::vector<int> counts(levels.size(), 0);
  for (const FactorRow* row : rows) {
    const auto& level = row->levels.at(factor);
    auto it = std::find(levels.begin(), levels.end(), level);
    const auto idx = static_cast<std::size_t>(it - levels.begin());
    sums[idx] += row->bf;
    ++counts[idx];
  }
  *complete = true;
  std::vector<double> means;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (counts[i] == 0) {
      *complete = false;
      continue;
    }
    means.push_back(sums[i] / counts[i]);
  }
  return means;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  const auto mx = kernels::mean_variance(xs);
  const auto my = kernels::mean_variance(ys);
  if (mx.variance <= 0.0 || my.variance <= 0.0) {
    throw EstimationError("correlation undefined for constant input");
  }
  double cov = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) cov += (xs[i] - mx.mean) * (ys[i] - my.mean);
  cov /= static_cast<double>(xs.size());
  return std::clamp(cov / std::sqrt(mx.variance * my.variance), -1.0, 1.0);
}

void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ParameterError("xs and ys must have equal length");
  if (xs.size() < 3) throw ParameterError("need at least 3 points");
}

}  // namespace

ParetoReport pareto_impacts(const FactorTable& table, ParetoMode mode) {
  if (table.rows.empty()) throw ParameterError("pareto: empty table");
  for (const auto& row : table.rows) {
    for (const auto& [factor, levels] : table.factor_domains) {
      auto it = row.levels.find(factor);
      if (it == row.levels.end()) {
        throw ParameterError("pareto: row without a level for factor " + factor);
      }
      if (std::find(levels.begin(), levels.end(), it->second) == levels.end()) {
        throw ParameterError("pareto: level \"" + it->second + "\" not in domain of " + factor);
      }
    }
  }

  std::vector<const FactorRow*> all;
  for (const auto& row : table.rows) all.push_back(&row);

  ParetoReport report;
  for (const auto& [factor, levels] : table.factor_domains) {
    bool complete = false;
    const auto means = level_means(all, factor, levels, &complete);
    if (!complete) {
      throw ParameterError("pareto: some level of factor " + factor + " has no rows");
    }
    if (mode == ParetoMode::kMarginal) {
      report.raw_impacts[factor] = mean_abs_pairwise(means);
      continue;
    }
    // Cells keyed by the levels of every other factor.
    std::map<std::vector<std::string>, std::vector<const FactorRow*>> cells;
    for (const FactorRow* row : all) {
      std::vector<std::string> key;
      for (const auto& [other, unused] : table.factor_domains) {
        if (other != factor) key.push_back(row->levels.at(other));
      }
      cells[key].push_back(row);
    }
    double total = 0.0;
    int used = 0;
    for (const auto& [key, rows] : cells) {
      bool cell_complete = false;
      const auto cell_means = level_means(rows, factor, levels, &cell_complete);
      if (!cell_complete) continue;
      total += mean_abs_pairwise(cell_means);
      ++used;
    }
    report.raw_impacts[factor] = used == 0 ? 0.0 : total / used;
  }

  double total = 0.0;
  for (const auto& [factor, impact] : report.raw_impacts) total += impact;
  for (const auto& [factor, impact] : report.raw_impacts) {
    report.normalized[factor] = total > 0.0 ? impact / total : 0.0;
  }
  return report;
}

std::string majority_vote(std::span<const std::string> votes) {
  if (votes.empty()) throw ParameterError("majority_vote: no votes");
  std::unordered_map<std::string_view, int> counts;
  int best = 0;
  for (const auto& v : votes) best = std::max(best, ++counts[v]);
  for (const auto& v : votes) {
    if (counts[v] == best) return v;
  }
  return votes.front();
}

std::map<int, MajorityStat> majority_at_k_std(std::span<const VoteInstance> pool,
                                              std::span<const int> ks, int trials,
                                              int samples_per_trial, std::uint64_t seed) {
  if (pool.empty()) throw ParameterError("majority: empty vote pool");
  if (ks.empty()) throw ParameterError("majority: no K values");
  if (trials < 1) throw ParameterError("majority: trials must be >= 1");
  for (int k : ks) {
    if (k < 1 || k > samples_per_trial) {
      throw ParameterError("majority: K=" + std::to_string(k) +
                           " must be in [1, samples_per_trial]");
    }
  }
  for (const auto& inst : pool) {
    if (inst.answers.empty()) throw ParameterError("majority: instance " + inst.id + " has no answers");
  }

  std::map<int, std::vector<double>> accuracies;
  std::vector<std::string> drawn(samples_per_trial);
  std::vector<int> correct(ks.size());
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed, static_cast<std::uint64_t>(trial));
    std::fill(correct.begin(), correct.end(), 0);
    for (const auto& inst : pool) {
      for (int s = 0; s < samples_per_trial; ++s) {
        drawn[s] = inst.answers[rng.below(inst.answers.size())];
      }
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        const std::span<const std::string> first_k(drawn.data(), ks[ki]);
        if (majority_vote(first_k) == inst.gold) ++correct[ki];
      }
    }
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      accuracies[ks[ki]].push_back(static_cast<double>(correct[ki]) / pool.size());
    }
  }

  std::map<int, MajorityStat> out;
  for (const auto& [k, values] : accuracies) {
    const auto mv = kernels::mean_variance(values);
    out[k] = {mv.mean, std::sqrt(mv.variance)};
  }
  return out;
}

double relative_drop(const std::map<std::string, double>& grid, const std::string& default_config,
                     const std::string& min_config) {
  auto d = grid.find(default_config);
  auto m = grid.find(min_config);
  if (d == grid.end()) throw ParameterError("relative_drop: unknown config " + default_config);
  if (m == grid.end()) throw ParameterError("relative_drop: unknown config " + min_config);
  if (d->second == 0.0) throw EstimationError("relative_drop: default accuracy is 0");
  return 100.0 * (d->second - m->second) / d->second;
}

double distinct_n(std::span<const std::vector<std::string>> texts, int n) {
  if (n < 1) throw ParameterError("distinct_n: n must be >= 1");
  std::set<std::vector<std::string>> unique;
  std::size_t total = 0;
  for (const auto& text : texts) {
    if (text.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= text.size(); ++i) {
      unique.emplace(text.begin() + i, text.begin() + i + n);
      ++total;
    }
  }
  if (total == 0) throw EstimationError("distinct_n: no text has " + std::to_string(n) + " tokens");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double min_k_percent(std::span<const double> token_logprobs, double k_percent) {
  if (token_logprobs.empty()) throw ParameterError("min_k_percent: empty input");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw ParameterError("min_k_percent: K must be in (0, 100]");
  }
  const double n = static_cast<double>(token_logprobs.size());
  // The tiny offset keeps exact products like 20% of 5 from rounding up.
  auto count = static_cast<std::size_t>(std::ceil(k_percent * n / 100.0 - 1e-9));
  count = std::clamp<std::size_t>(count, 1, token_logprobs.size());
  std::vector<double> sorted(token_logprobs.begin(), token_logprobs.end());
  std::partial_sort(sorted.begin(), sorted.begin() + count, sorted.end());
  return kernels::sum(std::span<const double>(sorted.data(), count)) / static_cast<double>(count);
}

double signed_r2(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const auto mx = kernels::mean_variance(xs);
  const auto my = kernels::mean_variance(ys);
  if (!(mx.variance > 0.0)) throw EstimationError("signed_r2: xs has zero variance");
  if (!(my.variance > 0.0)) return 0.0;  // flat ys: slope 0
  double cov = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) cov += (xs[i] - mx.mean) * (ys[i] - my.mean);
  cov /= static_cast<double>(xs.size());
  const double r2 = std::min(1.0, cov * cov / (mx.variance * my.variance));
  return cov > 0.0 ? r2 : (cov < 0.0 ? -r2 : 0.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

}  // namespace bfkit
