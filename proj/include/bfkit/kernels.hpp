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

// Reduction kernels behind every estimator. Each kernel has a scalar
// reference implementation plus vector variants; the variant is chosen once
// per process from the CPU's capabilities and can be pinned with the
// BFKIT_ISA environment variable ("scalar", "avx2", "neon").

#include <span>

namespace bfkit::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

const char* isa_name(Isa isa);

// Whether this binary and this CPU can run `isa`.
bool isa_available(Isa isa);

Isa active_isa();

// Overrides the dispatch choice. Throws ParameterError when unavailable.
void set_active_isa(Isa isa);

struct MeanVariance {
  double mean = 0.0;
  double variance = 0.0;  // population variance
};

double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
// -sum p_i * logp_i over entries with p_i > 0 (0 log 0 = 0).
double entropy(std::span<const double> p, std::span<const double> logp);
// Two-pass mean / population variance.
MeanVariance mean_variance(std::span<const double> x);

struct KernelTable {
  double (*sum)(const double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  double (*entropy)(const double*, const double*, std::size_t);
  double (*sum_sq_dev)(const double*, std::size_t, double);
};

// Per-ISA tables, exposed for equivalence testing. Returns nullptr when the
// ISA was not compiled in.
const KernelTable* table_for(Isa isa);

}  // namespace bfkit::kernels
