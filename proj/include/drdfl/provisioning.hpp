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

namespace drdfl::provisioning {

// Constants of the LLM capacity-provisioning objective. Capacities and
// workloads are tokens per slot; energy is kWh; the service value of a fully
// served token is s(1) = b_scale * ln(a_curve + 1).
struct ProvisioningParams {
  double a_curve = 20.0;     // utility curvature A
  double b_scale = 0.2;      // utility scale B
  double gamma = 0.34;       // cost weight (the energy term is ~5 orders below
                             // the utility term at this value; see net_reward_terms)
  double omega = 1.1;        // PUE
  double p_act = 4e-6;       // active kWh per token
  double p_idle = 1.4e-6;    // idle kWh per token
  double a_min = 0.0;        // capacity lower bound, tokens per slot
  double a_max = 4e5;        // capacity upper bound, tokens per slot
  int n_slots = 28;          // decision horizon N

  // Throws std::invalid_argument when any invariant is violated.
  void validate() const;
};

// Per-slot capacities a_1..a_N.
struct DecisionVector {
  std::vector<double> capacities;
};

struct RegretReport {
  double mean_alg_reward = 0.0;
  double mean_oracle_reward = 0.0;
  double regret = 0.0;
  bool defined = true;  // false when the oracle mean is not positive
  std::string dataset_id;
  double shift_distance = 0.0;  // Wasserstein distance to the training set, token units
};

// Service utility of capacity a against workload c: s(1)*c when a >= c,
// s(a/c)*c when a < c, with s(x) = B*ln(A*x + 1); 0 when c = 0.
double utility(double a, double c, const ProvisioningParams& p);

// Energy cost omega * (P_act*min(a,c) + P_idle*(a-c)^+).
double cost(double a, double c, const ProvisioningParams& p);

// Sum over slots of utility - gamma*cost. The decision loss used by the
// training code is f = -net_reward.
double net_reward(std::span<const double> capacities, std::span<const double> workloads,
                  const ProvisioningParams& p);

// Utility and cost sums reported separately so the gamma scale can be judged.
struct RewardTerms {
  double utility_sum = 0.0;
  double cost_sum = 0.0;  // kWh, before the gamma weight
  double net() const;
  double gamma = 0.34;
};
RewardTerms net_reward_terms(std::span<const double> capacities, std::span<const double> workloads,
                             const ProvisioningParams& p);

// Per-slot maximizer of utility - gamma*cost over [a_min, a_max]. The
// per-slot reward is concave up to c_hat and affine decreasing past it, so
// the maximizer is clip(min(a_interior, c_hat), a_min, a_max) with
// a_interior = c_hat * (B*A/(gamma*omega*P_act) - 1) / A; a_min when c_hat = 0.
DecisionVector optimal_decision(std::span<const double> c_hat, const ProvisioningParams& p);

// Same map for a single slot.
double optimal_capacity(double c_hat, const ProvisioningParams& p);

// Slope of the per-slot decision map away from the bound clips:
// d a / d c_hat = min(interior slope, 1).
double decision_slope(const ProvisioningParams& p);

// net_reward under decisions computed with the true workload.
double oracle_reward(std::span<const double> workloads, const ProvisioningParams& p);

// Normalized regret (mean oracle - mean alg) / mean oracle. A non-positive
// oracle mean is flagged as undefined rather than thrown.
RegretReport regret(std::span<const double> alg_rewards, std::span<const double> oracle_rewards);

// Derivatives used by the decision-focused gradient path and by W-DRO input
// ascent. All are almost-everywhere derivatives of the piecewise forms.
double utility_da(double a, double c, const ProvisioningParams& p);
double cost_da(double a, double c, const ProvisioningParams& p);
double slot_reward_da(double a, double c, const ProvisioningParams& p);
double utility_dc(double a, double c, const ProvisioningParams& p);
double cost_dc(double a, double c, const ProvisioningParams& p);
double slot_reward_dc(double a, double c, const ProvisioningParams& p);

}  // namespace drdfl::provisioning
