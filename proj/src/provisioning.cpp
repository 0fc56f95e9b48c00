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

#include "drdfl/provisioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace drdfl::provisioning {

namespace {

void check_nonnegative(double a, double c) {
  if (a < 0.0 || c < 0.0 || !std::isfinite(a) || !std::isfinite(c)) {
    throw std::domain_error("capacity and workload must be finite and non-negative");
  }
}

}  // namespace

void ProvisioningParams::validate() const {
  if (!(a_curve > 0.0)) throw std::invalid_argument("utility curvature A must be positive");
  if (!(b_scale > 0.0)) throw std::invalid_argument("utility scale B must be positive");
  if (!(gamma >= 0.0)) throw std::invalid_argument("cost weight gamma must be non-negative");
  if (!(omega >= 1.0)) throw std::invalid_argument("PUE omega must be at least 1");
  if (!(p_idle >= 0.0) || !(p_idle <= p_act)) {
    throw std::invalid_argument("idle power must satisfy 0 <= P_idle <= P_act");
  }
  if (!(a_min >= 0.0) || !(a_min < a_max)) {
    throw std::invalid_argument("capacity bounds must satisfy 0 <= a_min < a_max");
  }
  if (n_slots < 1) throw std::invalid_argument("n_slots must be at least 1");
}

double utility(double a, double c, const ProvisioningParams& p) {
  check_nonnegative(a, c);
  if (c == 0.0) return 0.0;
  const double ratio = a >= c ? 1.0 : a / c;
  return p.b_scale * std::log(p.a_curve * ratio + 1.0) * c;
}

double cost(double a, double c, const ProvisioningParams& p) {
  check_nonnegative(a, c);
  const double active = std::min(a, c);
  const double idle = std::max(a - c, 0.0);
  return p.omega * (p.p_act * active + p.p_idle * idle);
}

double net_reward(std::span<const double> capacities, std::span<const double> workloads,
                  const ProvisioningParams& p) {
  if (capacities.size() != workloads.size()) {
    throw std::invalid_argument("capacity and workload sequences must have equal length");
  }
  double total = 0.0;
  for (size_t i = 0; i < capacities.size(); ++i) {
    total += utility(capacities[i], workloads[i], p) - p.gamma * cost(capacities[i], workloads[i], p);
  }
  return total;
}

double RewardTerms::net() const { return utility_sum - gamma * cost_sum; }

RewardTerms net_reward_terms(std::span<const double> capacities, std::span<const double> workloads,
                             const ProvisioningParams& p) {
  if (capacities.size() != workloads.size()) {
    throw std::invalid_argument("capacity and workload sequences must have equal length");
  }
  RewardTerms out;
  out.gamma = p.gamma;
  for (size_t i = 0; i < capacities.size(); ++i) {
    out.utility_sum += utility(capacities[i], workloads[i], p);
    out.cost_sum += cost(capacities[i], workloads[i], p);
  }
  return out;
}

double decision_slope(const ProvisioningParams& p) {
  const double marginal_cost = p.gamma * p.omega * p.p_act;
  if (marginal_cost <= 0.0) return 1.0;
  const double interior = (p.b_scale * p.a_curve / marginal_cost - 1.0) / p.a_curve;
  return std::min(interior, 1.0);
}

double optimal_capacity(double c_hat, const ProvisioningParams& p) {
  if (c_hat < 0.0 || !std::isfinite(c_hat)) {
    throw std::domain_error("predicted workload must be finite and non-negative");
  }
  if (c_hat == 0.0) return p.a_min;
  const double slope = decision_slope(p);
  // A non-positive slope means serving is never worth the energy; stay at the floor.
  const double target = slope > 0.0 ? slope * c_hat : p.a_min;
  return std::clamp(target, p.a_min, p.a_max);
}

DecisionVector optimal_decision(std::span<const double> c_hat, const ProvisioningParams& p) {
  DecisionVector out;
  out.capacities.reserve(c_hat.size());
  for (const double v : c_hat) out.capacities.push_back(optimal_capacity(v, p));
  return out;
}

double oracle_reward(std::span<const double> workloads, const ProvisioningParams& p) {
  const DecisionVector best = optimal_decision(workloads, p);
  return net_reward(best.capacities, workloads, p);
}

RegretReport regret(std::span<const double> alg_rewards, std::span<const double> oracle_rewards) {
  if (alg_rewards.size() != oracle_rewards.size()) {
    throw std::invalid_argument("reward lists must have equal length");
  }
  if (alg_rewards.empty()) throw std::invalid_argument("reward lists must be non-empty");
  RegretReport rep;
  double alg = 0.0;
  double opt = 0.0;
  for (size_t i = 0; i < alg_rewards.size(); ++i) {
    alg += alg_rewards[i];
    opt += oracle_rewards[i];
  }
  rep.mean_alg_reward = alg / static_cast<double>(alg_rewards.size());
  rep.mean_oracle_reward = opt / static_cast<double>(oracle_rewards.size());
  if (rep.mean_alg_reward == rep.mean_oracle_reward) {
    rep.regret = 0.0;
  } else if (rep.mean_oracle_reward > 0.0) {
    rep.regret = (rep.mean_oracle_reward - rep.mean_alg_reward) / rep.mean_oracle_reward;
  } else {
    rep.regret = std::numeric_limits<double>::quiet_NaN();
    rep.defined = false;
  }
  return rep;
}

double utility_da(double a, double c, const ProvisioningParams& p) {
  if (c == 0.0 || a >= c) return 0.0;
  return p.a_curve * p.b_scale / (p.a_curve * a / c + 1.0);
}

double cost_da(double a, double c, const ProvisioningParams& p) {
  return a < c ? p.omega * p.p_act : p.omega * p.p_idle;
}

double slot_reward_da(double a, double c, const ProvisioningParams& p) {
  return utility_da(a, c, p) - p.gamma * cost_da(a, c, p);
}

double utility_dc(double a, double c, const ProvisioningParams& p) {
  if (c == 0.0) return 0.0;
  if (a >= c) return p.b_scale * std::log(p.a_curve + 1.0);
  const double r = a / c;
  const double w = p.a_curve * r + 1.0;
  return p.b_scale * (std::log(w) - p.a_curve * r / w);
}

double cost_dc(double a, double c, const ProvisioningParams& p) {
  return a > c ? p.omega * (p.p_act - p.p_idle) : 0.0;
}

double slot_reward_dc(double a, double c, const ProvisioningParams& p) {
  return utility_dc(a, c, p) - p.gamma * cost_dc(a, c, p);
}

}  // namespace drdfl::provisioning
