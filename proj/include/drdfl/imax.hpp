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
#include <span>
#include <string>
#include <vector>

#include "drdfl/data.hpp"
#include "drdfl/diffusion.hpp"
#include "drdfl/predictor.hpp"
#include "drdfl/provisioning.hpp"
#include "drdfl/random.hpp"

namespace drdfl::imax {

// Lagrangian dual state for the score-matching budget constraint.
struct DualState {
  double alpha = 0.1;
  double eta = 0.01;
  double epsilon = 0.03;
  std::vector<std::pair<double, double>> history;  // (J, alpha) after each update

  void validate() const;
};

struct DualConfig {
  double alpha0 = 0.1;
  double eta = 0.01;
  double epsilon = 0.03;
  // "calibrated" treats epsilon as a margin over J(theta_0) measured on the
  // held-out evaluation slice; "absolute" uses it as-is.
  std::string budget_mode = "calibrated";
  int iterations = 10;  // K
};

struct PpoConfig {
  double kappa = 0.4;       // clip parameter
  int tail_len = 10;        // T': reverse steps being fine-tuned
  int inner_epochs = 10;    // gradient passes per dual iteration
  int batch = 64;           // trajectories per dual iteration
  bool reward_standardize = true;
  double tail_sigma2 = 0.05;  // constant sampling variance in the tail
  double lr = 1e-6;
  std::string estimator = "ppo";  // or "vpg"
  int j_batch = 64;               // minibatch for the score-matching term
  double eval_fraction = 0.2;     // held-out slice of S0 for the dual's J
  uint64_t eval_seed = 9001;      // fixed stream for J evaluations

  void validate() const;
};

struct IterRecord {
  int k = 0;
  double j_value = 0.0;
  double alpha = 0.0;
  double mean_loss = 0.0;
  double clip_fraction = 0.0;
};

struct ImaxResult {
  diffusion::DiffusionModel model;
  DualState dual;
  std::vector<IterRecord> records;
  size_t dropped_trajectories = 0;
  double epsilon_effective = 0.0;
  double j_reference = 0.0;  // J(theta_0) on the evaluation slice
};

// Decision loss f of one generated sequence: slice into (v, c), predict,
// decide, and return -net_reward(y*(c_hat), c).
double decision_loss_of_sample(std::span<const double> x0_tokens, const predictor::Predictor& pred,
                               const provisioning::ProvisioningParams& prov);

// One trajectory's clipped surrogate contribution:
// min(r * f, clip(r, 1-kappa, 1+kappa) * f).
double clipped_surrogate_term(double ratio, double loss, double kappa);

// Clipped PPO surrogate of E_theta[f]: mean over trajectories of
// min(r*f, clip(r, 1-kappa, 1+kappa)*f) with r = exp(logp_tail(theta) -
// logp_tail(theta_0)). Standardizes f per batch when configured. Non-finite
// ratios drop their trajectory (counted in dropped); a fully dropped batch
// throws OptimizationError. Accumulates d(objective)/d(theta) when grad is
// given.
double ppo_objective(const diffusion::DiffusionModel& tuned, const diffusion::DiffusionModel& reference,
                     std::span<const diffusion::ReverseTrajectory> trajectories,
                     std::span<const double> losses, const PpoConfig& cfg,
                     std::vector<double>* grad = nullptr, double* clip_fraction = nullptr,
                     size_t* dropped = nullptr);

// Score-function estimator on trajectories sampled from the current model:
// mean over trajectories of f * d(logp_tail)/d(theta).
std::vector<double> vpg_gradient(const diffusion::DiffusionModel& current,
                                 std::span<const diffusion::ReverseTrajectory> trajectories,
                                 std::span<const double> losses, size_t* dropped = nullptr);

struct StepStats {
  double objective = 0.0;
  double j_term = 0.0;
  double clip_fraction = 0.0;
  size_t dropped = 0;
};

// inner_epochs ascent passes on [surrogate - alpha * J(theta, S0_train)].
// A non-finite pass rolls the parameters back, halves the rate and retries
// once; a second failure throws OptimizationError.
StepStats lagrangian_step(diffusion::DiffusionModel& tuned, const diffusion::DiffusionModel& reference,
                          double alpha, const Matrix& s0_train_norm,
                          std::span<const diffusion::ReverseTrajectory> trajectories,
                          std::span<const double> losses, const PpoConfig& cfg, nn::AdamState& opt,
                          RandomStream& stream,
                          const predictor::Predictor* pred = nullptr,
                          const provisioning::ProvisioningParams* prov = nullptr);

// alpha <- max(alpha + eta * (J - epsilon), 0); appends to the history.
void dual_update(DualState& dual, double j_current);

using IterCallback = std::function<void(const IterRecord&)>;

// Algorithm: initialize theta from theta_0, then K rounds of trajectory
// sampling from theta_0, surrogate ascent, and a dual step on the budget.
ImaxResult imax(const predictor::Predictor& pred, const diffusion::DiffusionModel& theta0,
                const data::TraceDataset& s0, const DualConfig& dual_cfg, const PpoConfig& ppo_cfg,
                const provisioning::ProvisioningParams& prov, RandomStream& stream,
                const IterCallback& on_iteration = {});

}  // namespace drdfl::imax
