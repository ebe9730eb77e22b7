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

#include <cstddef>

namespace bfkit::kernels {

namespace scalar {
double sum(const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double entropy(const double* p, const double* logp, std::size_t n);
double sum_sq_dev(const double* x, std::size_t n, double mean);
}  // namespace scalar

#if defined(BFKIT_HAVE_AVX2)
namespace avx2 {
double sum(const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double entropy(const double* p, const double* logp, std::size_t n);
double sum_sq_dev(const double* x, std::size_t n, double mean);
}  // namespace avx2
#endif

#if defined(BFKIT_HAVE_NEON)
namespace neon {
double sum(const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double entropy(const double* p, const double* logp, std::size_t n);
double sum_sq_dev(const double* x, std::size_t n, double mean);
}  // namespace neon
#endif

}  // namespace bfkit::kernels
