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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drdfl/data.hpp"
#include "drdfl/diffusion.hpp"
#include "drdfl/imax.hpp"
#include "drdfl/predictor.hpp"
#include "drdfl/provisioning.hpp"

namespace drdfl::trainer {

struct OuterConfig {
  int epochs = 15;                  // E; also the number of predictor passes
  int adversarial_set_size = 0;    // 0 means |S0|
  uint64_t seed = 1;
  bool carry_theta = false;        // keep the fine-tuned model across epochs instead of restarting
  bool freeze_diffusion = false;   // skip the inner maximization, sample from theta_0
  double validation_fraction = 0.1;

  provisioning::ProvisioningParams prov;
  predictor::PredictorConfig pred;
  predictor::TrainConfig pred_train;
  diffusion::DiffusionTrainConfig diff;
  imax::DualConfig dual;
  imax::PpoConfig ppo;
};

struct EpochRecord {
  int epoch = 0;
  bool skipped = false;
  double j_final = 0.0;
  double alpha_final = 0.0;
  double mean_adversarial_loss = 0.0;
  double mean_adversarial_workload = 0.0;  // tokens, mean over the epoch's S_theta
  double validation_regret = 0.0;
  std::vector<std::pair<double, double>> dual_history;  // the imax (J, alpha) trace
};

struct TrainResult {
  predictor::Predictor predictor;
  std::vector<EpochRecord> log;
  std::optional<diffusion::DiffusionModel> theta0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Outer loop: per epoch run the inner maximization against the current
// predictor, draw an adversarial dataset from the resulting model, and take
// one predictor training pass on it. An epoch whose inner maximization fails
// is skipped and logged; two consecutive failures abort.
TrainResult run_3d_learning(const data::TraceDataset& s0, const OuterConfig& cfg,
                            const diffusion::DiffusionModel* theta0 = nullptr,
                            const EpochCallback& on_epoch = {});

// Plain decision-focused baseline: trains the predictor directly on the S0
// windows with the configured objective.
TrainResult run_dfl(const data::TraceDataset& s0, const OuterConfig& cfg);

// Mean regret of a predictor's decisions over a dataset; also used by the
// harness for test-set evaluation.
provisioning::RegretReport evaluate_regret(const predictor::Predictor& pred, const data::TraceDataset& d,
                                           const provisioning::ProvisioningParams& prov);

}  // namespace drdfl::trainer
