/* Copyright 2026 The drdfl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "drdfl/parallel.hpp"

#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace drdfl::parallel {

namespace {

bool initial_enabled() {
#ifdef _OPENMP
  const char* env = std::getenv("DRDFL_SERIAL");
  return !(env != nullptr && env[0] == '1');
#else
  return false;
#endif
}

std::atomic<bool>& flag() {
  static std::atomic<bool> f{initial_enabled()};
  return f;
}

}  // namespace

bool enabled() { return flag().load(std::memory_order_relaxed); }

void set_enabled(bool on) {
#ifndef _OPENMP
  on = false;
#endif
  flag().store(on, std::memory_order_relaxed);
}

int max_threads() {
#ifdef _OPENMP
  return enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

namespace detail {

void run_indexed(int64_t n, void (*fn)(int64_t, void*), void* ctx, bool parallel) {
#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) fn(i, ctx);
    return;
  }
#else
  (void)parallel;
#endif
  for (int64_t i = 0; i < n; ++i) fn(i, ctx);
}

}  // namespace detail

}  // namespace drdfl::parallel
