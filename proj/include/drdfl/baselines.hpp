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

#include <span>
#include <vector>

#include "drdfl/data.hpp"
#include "drdfl/predictor.hpp"
#include "drdfl/provisioning.hpp"
#include "drdfl/random.hpp"

namespace drdfl::baselines {

struct KlDroConfig {
  double epsilon = 2.0;  // KL budget
  double beta_lo = 1e-9;
  double beta_hi = 1e9;
  double tol = 1e-8;  // bracketed 1-D minimization tolerance
};

struct KlWorstCase {
  double value = 0.0;
  std::vector<double> weights;  // exponential-tilt weights, sum to 1
  double beta = 0.0;
};

// Worst-case expectation over the KL ball via the 1-D dual:
// min_{beta > 0} beta * log(mean exp(f/beta)) + beta * epsilon, numerically
// stabilized by max subtraction; epsilon = 0 returns the plain mean.
KlWorstCase kl_worst_case(std::span<const double> losses, double epsilon, const KlDroConfig& cfg = {});

struct WDroConfig {
  double epsilon = 2.0;   // per-sample l2 radius in normalized units
  int steps = 5;          // ascent steps per sample per batch
  double step_size = 0.4; // normalized units per step
};

struct AugmentConfig {
  data::NoiseKind kind = data::NoiseKind::kCutout;
  double magnitude = 0.05;  // fraction of the dataset max (gaussian/perlin)
  double mask_prob = 0.05;  // cutout
  int perlin_lattice = 4;

  void validate() const;
};

// Original plus one perturbed copy of every sequence (the dataset doubles).
// The perturbation fields are the shared ones in the data module, so equal
// (kind, parameter, seed) match data::corrupt exactly.
data::TraceDataset augment(const data::TraceDataset& s0, const AugmentConfig& cfg, uint64_t seed);

struct BaselineTrainConfig {
  predictor::TrainConfig train{.epochs = 100, .lr = 2e-5};
  KlDroConfig kl;
  WDroConfig w;
};

// KL-DRO training: each batch's per-sample decision losses pass through the
// dual; gradients flow through the tilt weights held constant within a step.
std::vector<double> train_kl_dro(predictor::Predictor& pred, std::span<const predictor::WindowedSample> s0,
                                 const provisioning::ProvisioningParams& prov,
                                 const BaselineTrainConfig& cfg, RandomStream& stream);

struct WDroStats {
  size_t skipped_samples = 0;  // non-finite perturbation gradients
  std::vector<double> epoch_losses;
};

// W-DRO training: per-sample projected gradient ascent on the workload
// values inside the normalized l2 ball, then a predictor step on the
// perturbed batch.
WDroStats train_w_dro(predictor::Predictor& pred, std::span<const predictor::WindowedSample> s0,
                      const provisioning::ProvisioningParams& prov, const BaselineTrainConfig& cfg,
                      RandomStream& stream);

// Exposed for tests: one sample's PGD perturbation in normalized units.
predictor::WindowedSample perturb_sample(const predictor::Predictor& pred,
                                         const predictor::WindowedSample& sample,
                                         const provisioning::ProvisioningParams& prov,
                                         const WDroConfig& cfg, bool* skipped = nullptr);

}  // namespace drdfl::baselines
