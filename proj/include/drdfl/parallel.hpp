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

#pragma once

#include <cstdint>

namespace drdfl::parallel {

// Runtime switch for the OpenMP kernel paths. Kernels are written so that
// every output element has exactly one writer and reductions run over fixed
// chunk boundaries, so serial and parallel execution produce bit-identical
// results; the switch exists for the serial-reference tests and the kernel
// benchmark. Honors DRDFL_SERIAL=1 in the environment at startup.
bool enabled();
void set_enabled(bool on);
int max_threads();

// Invokes body(i) for i in [0, n). Parallel when enabled and the trip count
// is worth the fork overhead.
template <typename F>
void for_range(int64_t n, F&& body);

namespace detail {
void run_indexed(int64_t n, void (*fn)(int64_t, void*), void* ctx, bool parallel);
}

template <typename F>
void for_range(int64_t n, F&& body) {
  auto trampoline = [](int64_t i, void* ctx) { (*static_cast<F*>(ctx))(i); };
  detail::run_indexed(n, trampoline, &body, enabled() && n > 1);
}

}  // namespace drdfl::parallel
