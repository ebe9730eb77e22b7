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

#include <algorithm>
#include <cmath>

#include "bfkit/error.hpp"
#include "bfkit/rng.hpp"

namespace bfkit {

using json = nlohmann::ordered_json;

namespace {

constexpr double kSumTolerance = 1e-12;

void check_distribution(const std::vector<double>& probs, const char* what) {
  if (probs.empty()) throw ParameterError(std::string(what) + ": empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ParameterError(std::string(what) + ": probabilities must be finite and >= 0");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw ParameterError(std::string(what) + ": probabilities must sum to 1");
  }
}

double shannon(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

int draw(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cumulative += probs[i];
    last = static_cast<int>(i);
    if (u < cumulative) return last;
  }
  return last;  // u landed in the rounding gap above the final cumulative sum
}

std::vector<int> sample_tokens(const SyntheticProcess& process, int n, Rng& rng) {
  std::vector<int> tokens;
  tokens.reserve(n);
  int previous = -1;
  for (int t = 1; t <= n; ++t) {
    previous = draw(process.distribution(t, previous), rng);
    tokens.push_back(previous);
  }
  return tokens;
}

std::vector<CandidateLogprob> candidates_for(const std::vector<double>& probs) {
  std::vector<CandidateLogprob> out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    out.push_back({static_cast<std::int64_t>(i), "t" + std::to_string(i), std::log(probs[i]),
                   ExtraFields::object()});
  }
  sort_candidates(out);
  return out;
}

void check_checkpoints(std::span<const int> checkpoints) {
  if (checkpoints.empty()) throw ParameterError("no checkpoints given");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] < 1 || (i > 0 && checkpoints[i] <= checkpoints[i - 1])) {
      throw ParameterError("checkpoints must be positive and ascending");
    }
  }
}

}  // namespace

SyntheticProcess SyntheticProcess::iid(std::vector<double> probs) {
  check_distribution(probs, "iid");
  SyntheticProcess p;
  p.kind_ = Kind::kIid;
  p.vocab_size_ = static_cast<int>(probs.size());
  p.rows_.push_back(std::move(probs));
  return p;
}

SyntheticProcess SyntheticProcess::uniform(int k) {
  if (k < 1) throw ParameterError("uniform process needs k >= 1");
  return iid(std::vector<double>(k, 1.0 / k));
}

SyntheticProcess SyntheticProcess::markov(std::vector<double> initial,
                                          std::vector<std::vector<double>> transition) {
  check_distribution(initial, "markov initial");
  if (transition.size() != initial.size()) {
    throw ParameterError("markov: transition matrix must be k x k with k = |initial|");
  }
  for (const auto& row : transition) {
    if (row.size() != initial.size()) {
      throw ParameterError("markov: transition matrix must be square");
    }
    check_distribution(row, "markov row");
  }
  SyntheticProcess p;
  p.kind_ = Kind::kMarkov;
  p.vocab_size_ = static_cast<int>(initial.size());
  p.initial_ = std::move(initial);
  p.rows_ = std::move(transition);
  return p;
}

SyntheticProcess SyntheticProcess::schedule(std::vector<std::vector<double>> per_position) {
  if (per_position.empty()) throw ParameterError("schedule: no distributions");
  SyntheticProcess p;
  p.kind_ = Kind::kSchedule;
  for (const auto& d : per_position) {
    check_distribution(d, "schedule");
    p.vocab_size_ = std::max(p.vocab_size_, static_cast<int>(d.size()));
  }
  p.rows_ = std::move(per_position);
  return p;
}

SyntheticProcess SyntheticProcess::from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "iid") {
      if (j.contains("uniform")) return uniform(j.at("uniform").get<int>());
      return iid(j.at("probs").get<std::vector<double>>());
    }
    if (kind == "markov") {
      return markov(j.at("initial").get<std::vector<double>>(),
                    j.at("transition").get<std::vector<std::vector<double>>>());
    }
    if (kind == "schedule") {
      return schedule(j.at("distributions").get<std::vector<std::vector<double>>>());
    }
    throw ParameterError("unknown process kind \"" + kind + "\"");
  } catch (const json::exception& e) {
    throw ParameterError(std::string("process: ") + e.what());
  }
}

json SyntheticProcess::to_json() const {
  json j;
  switch (kind_) {
    case Kind::kIid:
      j["kind"] = "iid";
      j["probs"] = rows_.front();
      break;
    case Kind::kMarkov:
      j["kind"] = "markov";
      j["initial"] = initial_;
      j["transition"] = rows_;
      break;
    case Kind::kSchedule:
      j["kind"] = "schedule";
      j["distributions"] = rows_;
      break;
  }
  return j;
}

const std::vector<double>& SyntheticProcess::distribution(int position, int previous) const {
  switch (kind_) {
    case Kind::kIid:
      return rows_.front();
    case Kind::kMarkov:
      return position <= 1 || previous < 0 ? initial_ : rows_[previous];
    case Kind::kSchedule:
      return rows_[(position - 1) % rows_.size()];
  }
  return rows_.front();
}

double SyntheticProcess::max_surprisal() const {
  double bound = 0.0;
  auto scan = [&](const std::vector<double>& probs) {
    for (double p : probs) {
      if (p > 0.0) bound = std::max(bound, -std::log(p));
    }
  };
  if (kind_ == Kind::kMarkov) scan(initial_);
  for (const auto& row : rows_) scan(row);
  return bound;
}

double true_entropy_rate(const SyntheticProcess& process, int n) {
  if (n < 1) throw ParameterError("entropy rate needs n >= 1");
  double total = 0.0;
  switch (process.kind()) {
    case SyntheticProcess::Kind::kIid:
      return shannon(process.distribution(1, -1));
    case SyntheticProcess::Kind::kSchedule:
      for (int t = 1; t <= n; ++t) total += shannon(process.distribution(t, -1));
      return total / n;
    case SyntheticProcess::Kind::kMarkov: {
      const int k = process.vocab_size();
      std::vector<double> row_entropy(k);
      for (int i = 0; i < k; ++i) row_entropy[i] = shannon(process.distribution(2, i));
      // marginal holds the law of the previous token.
      std::vector<double> marginal = process.distribution(1, -1);
      total = shannon(marginal);
      for (int t = 2; t <= n; ++t) {
        std::vector<double> next(k, 0.0);
        for (int i = 0; i < k; ++i) {
          total += marginal[i] * row_entropy[i];
          const auto& row = process.distribution(t, i);
          for (int j = 0; j < k; ++j) next[j] += marginal[i] * row[j];
        }
        marginal = std::move(next);
      }
      return total / n;
    }
  }
  return 0.0;
}

std::vector<SequenceTrace> sample_traces(const SyntheticProcess& process, int n, int m,
                                         std::uint64_t seed, const std::string& prompt_id) {
  if (n < 1 || m < 1) throw ParameterError("sample_traces needs n >= 1 and m >= 1");

  // Candidate lists depend only on which distribution is in force, so build
  // each once.
  std::vector<std::vector<CandidateLogprob>> cache;
  std::vector<const std::vector<double>*> keys;
  auto candidates = [&](const std::vector<double>& dist) -> const std::vector<CandidateLogprob>& {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (keys[i] == &dist) return cache[i];
    }
    keys.push_back(&dist);
    cache.push_back(candidates_for(dist));
    return cache.back();
  };

  std::vector<SequenceTrace> traces;
  traces.reserve(m);
  for (int k = 0; k < m; ++k) {
    Rng rng(seed, static_cast<std::uint64_t>(k));
    const auto tokens = sample_tokens(process, n, rng);
    SequenceTrace trace;
    trace.prompt_id = prompt_id;
    trace.sample_index = k;
    trace.finish_reason = FinishReason::kLengthLimit;
    trace.decoding = {1.0, 1.0, static_cast<std::int64_t>(seed), ExtraFields::object()};
    trace.steps.reserve(n);
    int previous = -1;
    for (int t = 1; t <= n; ++t) {
      const auto& dist = process.distribution(t, previous);
      TokenStep step;
      step.position = t;
      step.chosen_token_id = tokens[t - 1];
      step.candidates = candidates(dist);
      step.temperature_applied = true;
      step.coverage_mass = std::min(1.0, coverage_of(step.candidates));
      trace.steps.push_back(std::move(step));
      previous = tokens[t - 1];
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

bool AepReport::all_ok() const {
  if (!trend_ok) return false;
  return std::all_of(checkpoints.begin(), checkpoints.end(),
                     [](const AepCheckpoint& c) { return c.chebyshev_ok && c.variance_ok; });
}

json AepReport::to_json() const {
  json j;
  j["epsilon"] = epsilon;
  j["n_traces"] = n_traces;
  j["max_surprisal"] = max_surprisal;
  json rows = json::array();
  for (const auto& c : checkpoints) {
    json row;
    row["N"] = c.length;
    row["entropy_rate"] = c.entropy_rate;
    row["violation_rate"] = c.violation_rate;
    row["chebyshev_bound"] = c.chebyshev_bound;
    row["binomial_margin"] = c.binomial_margin;
    row["var_logP"] = c.var_logp;
    row["bound_NM2"] = c.bound_nm2;
    row["chebyshev_ok"] = c.chebyshev_ok;
    row["variance_ok"] = c.variance_ok;
    rows.push_back(std::move(row));
  }
  j["checkpoints"] = std::move(rows);
  j["trend_ok"] = trend_ok;
  j["all_ok"] = all_ok();
  return j;
}

AepReport aep_verify(const SyntheticProcess& process, std::span<const int> checkpoints, int m,
                     double epsilon, std::uint64_t seed) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("epsilon must be in (0, 1)");
  if (m < 1) throw ParameterError("aep_verify needs at least one trace");
  check_checkpoints(checkpoints);

  const int max_len = checkpoints.back();
  // logp[c][k]: log P(y_1:N) of trace k at checkpoint c.
  std::vector<std::vector<double>> logp(checkpoints.size(), std::vector<double>(m));
  for (int k = 0; k < m; ++k) {
    Rng rng(seed, static_cast<std::uint64_t>(k));
    const auto tokens = sample_tokens(process, max_len, rng);
    double acc = 0.0;
    std::size_t c = 0;
    int previous = -1;
    for (int t = 1; t <= max_len; ++t) {
      acc += std::log(process.distribution(t, previous)[tokens[t - 1]]);
      previous = tokens[t - 1];
      if (t == checkpoints[c]) logp[c++][k] = acc;
    }
  }

  AepReport report;
  report.epsilon = epsilon;
  report.n_traces = m;
  report.max_surprisal = process.max_surprisal();
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const int n = checkpoints[c];
    AepCheckpoint cp;
    cp.length = n;
    cp.entropy_rate = true_entropy_rate(process, n);
    double mean = 0.0;
    int violations = 0;
    for (double v : logp[c]) {
      mean += v;
      if (std::abs(-v / n - cp.entropy_rate) >= epsilon) ++violations;
    }
    mean /= m;
    double ss = 0.0;
    for (double v : logp[c]) ss += (v - mean) * (v - mean);
    cp.var_logp = ss / m;
    cp.violation_rate = static_cast<double>(violations) / m;
    cp.chebyshev_bound = cp.var_logp / (static_cast<double>(n) * n * epsilon * epsilon);
    const double b = std::min(1.0, cp.chebyshev_bound);
    cp.binomial_margin = 3.0 * std::sqrt(b * (1.0 - b) / m);
    cp.bound_nm2 = n * report.max_surprisal * report.max_surprisal;
    cp.chebyshev_ok = cp.violation_rate <= cp.chebyshev_bound + cp.binomial_margin;
    // Relative slack for the deterministic case, where both sides are ~0.
    cp.variance_ok = cp.var_logp <= cp.bound_nm2 * (1.0 + 1e-12) + 1e-18;
    report.checkpoints.push_back(cp);
  }
  report.trend_ok =
      report.checkpoints.back().violation_rate <= report.checkpoints.front().violation_rate;
  return report;
}

}  // namespace bfkit
