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

#include "bfkit/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "bfkit/error.hpp"
#include "kernels_impl.hpp"

namespace bfkit::kernels {

namespace {

constexpr KernelTable kScalarTable{scalar::sum, scalar::dot, scalar::entropy,
                                   scalar::sum_sq_dev};
#if defined(BFKIT_HAVE_AVX2)
constexpr KernelTable kAvx2Table{avx2::sum, avx2::dot, avx2::entropy, avx2::sum_sq_dev};
#endif
#if defined(BFKIT_HAVE_NEON)
constexpr KernelTable kNeonTable{neon::sum, neon::dot, neon::entropy, neon::sum_sq_dev};
#endif

bool cpu_has_avx2() {
#if defined(BFKIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("BFKIT_ISA")) {
    const std::string_view want(env);
    if (want == "scalar") return Isa::kScalar;
    if (want == "avx2" && isa_available(Isa::kAvx2)) return Isa::kAvx2;
    if (want == "neon" && isa_available(Isa::kNeon)) return Isa::kNeon;
  }
  if (isa_available(Isa::kAvx2)) return Isa::kAvx2;
  if (isa_available(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> table{table_for(detect())};
  return table;
}

std::atomic<Isa>& active_isa_slot() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

const KernelTable& current() { return *active_table().load(std::memory_order_relaxed); }

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "scalar";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return cpu_has_avx2();
    case Isa::kNeon:
#if defined(BFKIT_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &kScalarTable;
    case Isa::kAvx2:
#if defined(BFKIT_HAVE_AVX2)
      return cpu_has_avx2() ? &kAvx2Table : nullptr;
#else
      return nullptr;
#endif
    case Isa::kNeon:
#if defined(BFKIT_HAVE_NEON)
      return &kNeonTable;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

Isa active_isa() { return active_isa_slot().load(); }

void set_active_isa(Isa isa) {
  const KernelTable* table = table_for(isa);
  if (table == nullptr) {
    throw ParameterError(std::string("ISA not available: ") + isa_name(isa));
  }
  active_table().store(table);
  active_isa_slot().store(isa);
}

double sum(std::span<const double> x) { return current().sum(x.data(), x.size()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ParameterError("dot: length mismatch");
  return current().dot(a.data(), b.data(), a.size());
}

double entropy(std::span<const double> p, std::span<const double> logp) {
  if (p.size() != logp.size()) throw ParameterError("entropy: length mismatch");
  return current().entropy(p.data(), logp.data(), p.size());
}

MeanVariance mean_variance(std::span<const double> x) {
  if (x.empty()) return {};
  const auto& k = current();
  const double n = static_cast<double>(x.size());
  const double mean = k.sum(x.data(), x.size()) / n;
  return {mean, k.sum_sq_dev(x.data(), x.size(), mean) / n};
}

}  // namespace bfkit::kernels
