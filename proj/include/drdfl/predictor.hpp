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
#include <string>
#include <vector>

#include <json.hpp>

#include "drdfl/data.hpp"
#include "drdfl/matrix.hpp"
#include "drdfl/nn.hpp"
#include "drdfl/provisioning.hpp"
#include "drdfl/random.hpp"

namespace drdfl::predictor {

constexpr const char* kCheckpointMagic = "DRDFL-PRED-v1";

// One labeled example: W past workload values and N future ones, token units.
struct WindowedSample {
  std::vector<double> context;
  std::vector<double> label;
};

// v = first W values, c = the rest. Throws on W < 1 or length mismatch.
WindowedSample slice_sample(std::span<const double> sequence, int context);

// Slices every sequence of a dataset.
std::vector<WindowedSample> windows_of(const data::TraceDataset& d);

struct PredictorConfig {
  std::vector<int> hidden{128, 64};
  int context = 8;   // W
  int horizon = 28;  // N
  double norm = 4e5;
  uint64_t init_seed = 1;
};

// Causal workload forecaster: stacked LSTM rolled out autoregressively.
// Token-space interface; normalization happens inside.
class Predictor {
 public:
  explicit Predictor(const PredictorConfig& cfg);

  const PredictorConfig& config() const { return cfg_; }
  nn::LstmNet& net() { return net_; }
  const nn::LstmNet& net() const { return net_; }

  // context tokens [W] -> predicted tokens [N]; deterministic, non-negative.
  std::vector<double> predict(std::span<const double> context) const;
  // context tokens [n x W] -> predictions [n x N].
  Matrix predict_batch(const Matrix& context_tokens) const;

 private:
  PredictorConfig cfg_;
  nn::LstmNet net_;
};

struct DflOptions {
  // Softplus-smoothed bound clips in the decision map (training-time only;
  // evaluation uses the hard map). Temperature is temp_frac * a_max.
  bool smooth_clip = false;
  double temp_frac = 1e-3;
  // Two-point zero-order estimate of the per-slot reward derivative instead
  // of the analytic one; perturbation is zo_step in normalized units.
  bool zero_order = false;
  double zo_step = 1e-3;
};

// Decision-focused loss: mean over the batch of -net_reward(y*(predict(v)), c).
// Accumulates d(loss)/d(params) when grad is given; per-sample weights (for
// the KL-DRO tilt) default to uniform 1/n.
double dfl_loss(const Predictor& pred, std::span<const WindowedSample> batch,
                const provisioning::ProvisioningParams& prov, const DflOptions& opts = {},
                std::vector<double>* grad = nullptr, std::span<const double> sample_weights = {});

// Per-sample decision losses f_i = -net_reward_i (no averaging).
std::vector<double> dfl_per_sample_losses(const Predictor& pred, std::span<const WindowedSample> batch,
                                          const provisioning::ProvisioningParams& prov,
                                          const DflOptions& opts = {});

// Mean squared prediction error in normalized units over all (sample, slot)
// pairs.
double mse_loss(const Predictor& pred, std::span<const WindowedSample> batch,
                std::vector<double>* grad = nullptr);

// Gradient of one sample's decision loss with respect to its own workload
// values (normalized units); used by the W-DRO inner ascent.
void input_gradient(const Predictor& pred, const WindowedSample& sample,
                    const provisioning::ProvisioningParams& prov, std::vector<double>* dcontext_norm,
                    std::vector<double>* dlabel_norm);

enum class Objective { kDfl, kMse };
Objective objective_from_string(const std::string& name);

struct TrainConfig {
  Objective objective = Objective::kDfl;
  int epochs = 15;
  int batch = 64;
  double lr = 1e-6;  // the baseline DRO pipelines use 2e-5 over 100 epochs
  DflOptions dfl{.smooth_clip = true};
  double max_rel_loss_increase = 0.05;  // logged, not enforced
};

// Stochastic gradient training with Adam; returns per-epoch mean losses.
// Throws TrainingError on divergence.
std::vector<double> train(Predictor& pred, std::span<const WindowedSample> dataset,
                          const provisioning::ProvisioningParams& prov, const TrainConfig& cfg,
                          RandomStream& stream);

// One pass over the dataset (epochs = 1) reusing an external Adam state, for
// the outer training loop.
double train_one_pass(Predictor& pred, std::span<const WindowedSample> dataset,
                      const provisioning::ProvisioningParams& prov, const TrainConfig& cfg,
                      nn::AdamState& opt, RandomStream& stream);

void save_checkpoint(const Predictor& pred, const std::string& path);
Predictor load_checkpoint(const std::string& path);

}  // namespace drdfl::predictor
