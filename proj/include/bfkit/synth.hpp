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
#include <span>
#include <string>
#include <vector>

#include "bfkit/trace.hpp"
#include "json.hpp"

namespace bfkit {

// A token process with an analytically known entropy rate. Token ids are
// indices into the distributions; zero entries are outside the support.
class SyntheticProcess {
 public:
  enum class Kind { kIid, kMarkov, kSchedule };

  static SyntheticProcess iid(std::vector<double> probs);
  static SyntheticProcess uniform(int k);
  static SyntheticProcess markov(std::vector<double> initial,
                                 std::vector<std::vector<double>> transition);
  // Per-position distributions, cycled: position t uses entry (t-1) mod size.
  static SyntheticProcess schedule(std::vector<std::vector<double>> per_position);

  // {"kind":"iid","probs":[...]} | {"kind":"iid","uniform":k}
  // {"kind":"markov","initial":[...],"transition":[[...],...]}
  // {"kind":"schedule","distributions":[[...],...]}
  static SyntheticProcess from_json(const nlohmann::ordered_json& j);
  nlohmann::ordered_json to_json() const;

  Kind kind() const { return kind_; }
  int vocab_size() const { return vocab_size_; }

  // Distribution of the token at `position` (1-based) given the previous
  // token (ignored unless Markov; -1 at position 1).
  const std::vector<double>& distribution(int position, int previous) const;

  // Largest -log p over every supported token of every distribution.
  double max_surprisal() const;

 private:
  Kind kind_ = Kind::kIid;
  int vocab_size_ = 0;
  std::vector<double> initial_;
  std::vector<std::vector<double>> rows_;
};

// Exact mean per-token entropy over positions 1..n, in nats.
double true_entropy_rate(const SyntheticProcess& process, int n);

// M traces of length n with the full support as candidates and exact
// logprobs. Trace k draws from its own stream derived from (seed, k).
std::vector<SequenceTrace> sample_traces(const SyntheticProcess& process, int n, int m,
                                         std::uint64_t seed,
                                         const std::string& prompt_id = "synthetic");

struct AepCheckpoint {
  int length = 0;
  double entropy_rate = 0.0;     // exact mean entropy per token up to length
  double violation_rate = 0.0;   // share of traces with |NLL/N - H| >= epsilon
  double var_logp = 0.0;         // population variance of log P(y_1:N)
  double chebyshev_bound = 0.0;  // var_logp / (N^2 epsilon^2)
  double binomial_margin = 0.0;  // 3 sigma allowance on the empirical rate
  double bound_nm2 = 0.0;        // N * M_bound^2
  bool chebyshev_ok = false;
  bool variance_ok = false;
};

struct AepReport {
  double epsilon = 0.0;
  int n_traces = 0;
  double max_surprisal = 0.0;  // M_bound
  std::vector<AepCheckpoint> checkpoints;
  bool trend_ok = false;  // last-checkpoint rate <= first-checkpoint rate
  bool all_ok() const;

  nlohmann::ordered_json to_json() const;
};

AepReport aep_verify(const SyntheticProcess& process, std::span<const int> checkpoints, int m,
                     double epsilon, std::uint64_t seed);

}  // namespace bfkit
