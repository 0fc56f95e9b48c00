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

// Times the OpenMP kernel paths against the serial reference implementations
// on the shapes this project actually runs: dense layer products, 1-D
// convolutions, diffusion sampling batches and dataset evaluation.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "drdfl/data.hpp"
#include "drdfl/diffusion.hpp"
#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"
#include "drdfl/predictor.hpp"
#include "drdfl/provisioning.hpp"
#include "drdfl/random.hpp"
#include "drdfl/trainer.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

void report(const char* name, double serial_s, double parallel_s) {
  std::printf("%-28s serial %9.4f ms   openmp %9.4f ms   speedup %.2fx\n", name, serial_s * 1e3,
              parallel_s * 1e3, serial_s / parallel_s);
}

}  // namespace

int main() {
  using namespace drdfl;
  std::printf("threads available: %d\n\n", parallel::max_threads());

  {
    const int m = 256, k = 256, n = 256;
    std::vector<double> a(m * k), b(k * n), c(m * n);
    RandomStream s(1);
    for (auto& v : a) v = s.normal();
    for (auto& v : b) v = s.normal();
    const double ts = time_of([&] { kernels::serial::gemm_nn(a.data(), b.data(), c.data(), m, k, n); }, 5);
    const double tp = time_of([&] { kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n); }, 5);
    report("gemm_nn 256^3", ts, tp);
  }
  {
    const int batch = 64, cin = 32, len = 36, cout_c = 64;
    std::vector<double> x(batch * cin * len), w(cout_c * cin * 3), bias(cout_c);
    std::vector<double> y(static_cast<size_t>(batch) * cout_c * kernels::conv1d_out_len(len, 3, 1, 1));
    RandomStream s(2);
    for (auto& v : x) v = s.normal();
    for (auto& v : w) v = s.normal();
    const double ts = time_of(
        [&] { kernels::serial::conv1d_fwd(x.data(), w.data(), bias.data(), y.data(), batch, cin, len, cout_c, 3, 1, 1); },
        5);
    const double tp = time_of(
        [&] { kernels::conv1d_fwd(x.data(), w.data(), bias.data(), y.data(), batch, cin, len, cout_c, 3, 1, 1); },
        5);
    report("conv1d 64x32x36 -> 64ch", ts, tp);
  }
  {
    data::SynthParams params;
    const auto d = data::synth_generate(data::SynthKind::kAr1, 64, 36, 8, params, 7);
    diffusion::DiffusionTrainConfig cfg;
    cfg.arch = {{"kind", "mlp"}, {"hidden", 128}, {"temb_dim", 32}};
    cfg.t_max = 100;
    cfg.epochs = 1;
    cfg.lr = 1e-3;
    RandomStream stream(3);
    auto model = diffusion::train_reference(d, cfg, stream).model;
    RandomStream s1(4), s2(4);
    parallel::set_enabled(false);
    const double ts = time_of([&] { diffusion::sample(model, 32, s1); }, 2);
    parallel::set_enabled(true);
    const double tp = time_of([&] { diffusion::sample(model, 32, s2); }, 2);
    report("diffusion sample 32xT100", ts, tp);
  }
  {
    data::SynthParams params;
    const auto d = data::synth_generate(data::SynthKind::kAr1, 256, 36, 8, params, 8);
    predictor::PredictorConfig pc;
    pc.hidden = {32, 16};
    predictor::Predictor pred(pc);
    provisioning::ProvisioningParams prov;
    parallel::set_enabled(false);
    const double ts = time_of([&] { trainer::evaluate_regret(pred, d, prov); }, 3);
    parallel::set_enabled(true);
    const double tp = time_of([&] { trainer::evaluate_regret(pred, d, prov); }, 3);
    report("evaluate_regret 256 seqs", ts, tp);
  }
  return 0;
}
