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

#include "bfkit/bf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bfkit/decoding.hpp"
#include "bfkit/error.hpp"
#include "bfkit/kernels.hpp"

namespace bfkit {

namespace {

// Reductions run in (prompt_id, sample_index) order so results do not depend
// on the order traces were read or produced.
std::vector<std::size_t> canonical_order(std::span<const SequenceTrace> traces) {
  std::vector<std::size_t> order(traces.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (traces[a].prompt_id != traces[b].prompt_id) {
      return traces[a].prompt_id < traces[b].prompt_id;
    }
    return traces[a].sample_index < traces[b].sample_index;
  });
  return order;
}

// log P~(chosen) usable by the NLL estimator, falling back to the
// producer-recorded value when the candidates do not contain the token.
std::optional<double> nll_logprob(const TokenStep& step, const StepResult& r) {
  if (r.status == StepStatus::kOk) return r.chosen_logprob;
  if (r.status == StepStatus::kChosenMissing && step.chosen_logprob) {
    return step.chosen_logprob;
  }
  return std::nullopt;
}

double aggregate(std::span<const double> per_sequence, Aggregation aggregation) {
  const double n = static_cast<double>(per_sequence.size());
  if (aggregation == Aggregation::kGeometric) {
    return std::exp(kernels::sum(per_sequence) / n);
  }
  std::vector<double> exps(per_sequence.size());
  std::transform(per_sequence.begin(), per_sequence.end(), exps.begin(),
                 [](double v) { return std::exp(v); });
  return kernels::sum(exps) / n;
}

std::string describe(const SequenceTrace& trace, int position) {
  std::ostringstream os;
  os << "prompt_id=" << trace.prompt_id << " sample_index=" << trace.sample_index
     << " position=" << position;
  return os.str();
}

}  // namespace

const char* to_string(Estimator estimator) {
  return estimator == Estimator::kEntropy ? "entropy" : "nll";
}

Estimator estimator_from_string(const std::string& text) {
  if (text == "entropy") return Estimator::kEntropy;
  if (text == "nll") return Estimator::kNll;
  throw ParameterError("unknown estimator \"" + text + "\" (expected entropy or nll)");
}

BfEstimate bf_entropy(std::span<const SequenceTrace> traces, const DecodingParams& params,
                      const BfOptions& options) {
  BfEstimate est;
  est.estimator = Estimator::kEntropy;
  double length_sum = 0.0;
  double coverage_sum = 0.0;
  std::size_t coverage_n = 0;

  std::vector<double> entropies;
  for (std::size_t idx : canonical_order(traces)) {
    const SequenceTrace& trace = traces[idx];
    entropies.clear();
    for (const TokenStep& step : trace.steps) {
      ++est.total_steps;
      const StepResult r = step_pipeline(step, params);
      if (r.degraded()) {
        ++est.degraded_steps;
        continue;
      }
      entropies.push_back(r.entropy);
      coverage_sum += step.coverage_mass;
      ++coverage_n;
    }
    if (entropies.empty()) {
      ++est.excluded_traces;
      continue;
    }
    est.per_sequence_values.push_back(kernels::sum(entropies) /
                                      static_cast<double>(entropies.size()));
    length_sum += static_cast<double>(trace.steps.size());
  }

  if (est.per_sequence_values.empty()) {
    throw EstimationError("entropy estimator: no trace has a non-degraded step (" +
                          std::to_string(est.degraded_steps) + " of " +
                          std::to_string(est.total_steps) + " steps degraded)");
  }
  est.n_sequences = static_cast<int>(est.per_sequence_values.size());
  est.mean_seq_length = length_sum / est.n_sequences;
  est.coverage_summary = coverage_sum / static_cast<double>(coverage_n);
  est.value = aggregate(est.per_sequence_values, options.aggregation);
  return est;
}

BfEstimate bf_nll(std::span<const SequenceTrace> traces, const DecodingParams& params,
                  const BfOptions& options) {
  BfEstimate est;
  est.estimator = Estimator::kNll;
  double length_sum = 0.0;
  double coverage_sum = 0.0;
  std::size_t coverage_n = 0;

  std::vector<double> logprobs;
  for (std::size_t idx : canonical_order(traces)) {
    const SequenceTrace& trace = traces[idx];
    logprobs.clear();
    bool usable = !trace.steps.empty();
    double trace_coverage = 0.0;
    for (const TokenStep& step : trace.steps) {
      ++est.total_steps;
      const StepResult r = step_pipeline(step, params);
      const auto lp = nll_logprob(step, r);
      if (!lp) {
        ++est.degraded_steps;
        if (options.on_degraded == DegradedPolicy::kThrow) {
          throw EstimationError("nll estimator: degraded step at " +
                                describe(trace, step.position));
        }
        usable = false;
        continue;
      }
      logprobs.push_back(*lp);
      trace_coverage += step.coverage_mass;
    }
    if (!usable) {
      ++est.excluded_traces;
      continue;
    }
    est.per_sequence_values.push_back(-kernels::sum(logprobs) /
                                      static_cast<double>(logprobs.size()));
    length_sum += static_cast<double>(trace.steps.size());
    coverage_sum += trace_coverage;
    coverage_n += logprobs.size();
  }

  if (est.per_sequence_values.empty()) {
    throw EstimationError("nll estimator: no usable trace (" +
                          std::to_string(est.degraded_steps) + " degraded steps, " +
                          std::to_string(est.excluded_traces) + " traces excluded)");
  }
  est.n_sequences = static_cast<int>(est.per_sequence_values.size());
  est.mean_seq_length = length_sum / est.n_sequences;
  est.coverage_summary = coverage_sum / static_cast<double>(coverage_n);
  est.value = aggregate(est.per_sequence_values, options.aggregation);
  return est;
}

BfEstimate estimate_bf(Estimator estimator, std::span<const SequenceTrace> traces,
                       const DecodingParams& params, const BfOptions& options) {
  return estimator == Estimator::kEntropy ? bf_entropy(traces, params, options)
                                          : bf_nll(traces, params, options);
}

double bf_task(std::span<const std::pair<PromptCase, BfEstimate>> instances,
               const std::optional<std::map<std::string, double>>& weights) {
  if (instances.empty()) throw ParameterError("bf_task: no instances");
  if (!weights) {
    std::vector<double> values;
    values.reserve(instances.size());
    for (const auto& [prompt, est] : instances) values.push_back(est.value);
    return kernels::sum(values) / static_cast<double>(values.size());
  }

  double total_weight = 0.0;
  for (const auto& [id, w] : *weights) {
    const bool known = std::any_of(instances.begin(), instances.end(),
                                   [&](const auto& inst) { return inst.first.prompt_id == id; });
    if (!known) throw ParameterError("bf_task: weight for unknown prompt_id " + id);
    if (!(w >= 0.0)) throw ParameterError("bf_task: negative weight for " + id);
    total_weight += w;
  }
  if (std::abs(total_weight - 1.0) > 1e-9) {
    throw ParameterError("bf_task: weights must sum to 1");
  }
  std::vector<double> w(instances.size());
  std::vector<double> v(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto it = weights->find(instances[i].first.prompt_id);
    w[i] = it == weights->end() ? 0.0 : it->second;
    v[i] = instances[i].second.value;
  }
  return kernels::dot(w, v);
}

std::vector<double> ema(std::span<const double> series, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("ema: alpha must be in (0, 1]");
  std::vector<double> out;
  out.reserve(series.size());
  for (double x : series) {
    out.push_back(out.empty() ? x : alpha * x + (1.0 - alpha) * out.back());
  }
  return out;
}

std::vector<TrajectoryPoint> bf_trajectory(std::span<const SequenceTrace> traces,
                                           const DecodingParams& params, int window_len,
                                           Estimator estimator, double alpha) {
  if (window_len < 1) throw ParameterError("trajectory: window length must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("trajectory: alpha must be in (0, 1]");
  if (traces.empty()) throw ParameterError("trajectory: no traces");

  std::map<int, std::vector<double>> windows;
  for (std::size_t idx : canonical_order(traces)) {
    for (const TokenStep& step : traces[idx].steps) {
      const StepResult r = step_pipeline(step, params);
      double value;
      if (estimator == Estimator::kEntropy) {
        if (r.degraded()) continue;
        value = r.entropy;
      } else {
        const auto lp = nll_logprob(step, r);
        if (!lp) continue;
        value = -*lp;
      }
      windows[(step.position - 1) / window_len].push_back(value);
    }
  }

  std::vector<TrajectoryPoint> points;
  std::vector<double> raw;
  for (const auto& [index, values] : windows) {
    TrajectoryPoint p;
    p.window_start = index * window_len + 1;
    p.window_len = window_len;
    p.n_steps = static_cast<int>(values.size());
    p.bf_raw = std::exp(kernels::sum(values) / static_cast<double>(values.size()));
    raw.push_back(p.bf_raw);
    points.push_back(p);
  }
  const auto smoothed = ema(raw, alpha);
  for (std::size_t i = 0; i < points.size(); ++i) points[i].bf_ema = smoothed[i];
  return points;
}

std::vector<DispersionPoint> nll_dispersion_curve(std::span<const SequenceTrace> traces,
                                                  const DecodingParams& params,
                                                  std::span<const int> checkpoints) {
  if (checkpoints.empty()) throw ParameterError("dispersion: no checkpoints");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] < 1 || (i > 0 && checkpoints[i] <= checkpoints[i - 1])) {
      throw ParameterError("dispersion: checkpoints must be positive and ascending");
    }
  }

  // Per trace, the longest non-degraded prefix of (logprob, entropy) pairs.
  struct Prefix {
    std::vector<double> logprobs;
    std::vector<double> entropies;
  };
  std::vector<Prefix> prefixes;
  for (std::size_t idx : canonical_order(traces)) {
    Prefix prefix;
    for (const TokenStep& step : traces[idx].steps) {
      const StepResult r = step_pipeline(step, params);
      const auto lp = nll_logprob(step, r);
      if (!lp || r.degraded()) break;
      prefix.logprobs.push_back(*lp);
      prefix.entropies.push_back(r.entropy);
    }
    prefixes.push_back(std::move(prefix));
  }

  std::vector<DispersionPoint> curve;
  std::vector<double> nlls;
  std::vector<double> gaps;
  for (int n : checkpoints) {
    nlls.clear();
    gaps.clear();
    for (const Prefix& prefix : prefixes) {
      if (prefix.logprobs.size() < static_cast<std::size_t>(n)) continue;
      const std::span<const double> lp(prefix.logprobs.data(), n);
      const std::span<const double> h(prefix.entropies.data(), n);
      const double nll = -kernels::sum(lp) / n;
      nlls.push_back(nll);
      gaps.push_back(std::abs(nll - kernels::sum(h) / n));
    }
    if (nlls.empty() && curve.empty()) {
      throw EstimationError("dispersion: no trace reaches length " + std::to_string(n));
    }
    DispersionPoint p;
    p.length = n;
    p.n_traces = static_cast<int>(nlls.size());
    p.n_excluded = static_cast<int>(prefixes.size() - nlls.size());
    if (nlls.empty()) {
      p.nll_std = std::nan("");
      p.mean_abs_gap = std::nan("");
    } else {
      p.nll_std = std::sqrt(kernels::mean_variance(nlls).variance);
      p.mean_abs_gap = kernels::sum(gaps) / static_cast<double>(gaps.size());
    }
    curve.push_back(p);
  }
  return curve;
}

int count_degraded_steps(std::span<const SequenceTrace> traces, const DecodingParams& params) {
  int degraded = 0;
  for (const auto& trace : traces) {
    for (const auto& step : trace.steps) {
      if (step_pipeline(step, params).degraded()) ++degraded;
    }
  }
  return degraded;
}

}  // namespace bfkit
