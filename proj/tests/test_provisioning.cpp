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

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "drdfl/provisioning.hpp"
#include "drdfl/random.hpp"

using namespace drdfl;
using namespace drdfl::provisioning;

namespace {

// Independent oracle: per-slot reward maximum over an even grid.
double grid_best_capacity(double c, const ProvisioningParams& p, int points = 4001) {
  double best_a = p.a_min;
  double best_r = -1e300;
  for (int i = 0; i < points; ++i) {
    const double a = p.a_min + (p.a_max - p.a_min) * i / (points - 1);
    const double r = utility(a, c, p) - p.gamma * cost(a, c, p);
    if (r > best_r) {
      best_r = r;
      best_a = a;
    }
  }
  return best_a;
}

double slot_reward(double a, double c, const ProvisioningParams& p) {
  return utility(a, c, p) - p.gamma * cost(a, c, p);
}

}  // namespace

TEST_SUITE_BEGIN("provisioning");

TEST_CASE("parameter invariants are enforced") {
  ProvisioningParams p;
  CHECK_NOTHROW(p.validate());
  p.a_curve = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ProvisioningParams{};
  p.p_idle = 2.0 * p.p_act;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ProvisioningParams{};
  p.a_min = p.a_max;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ProvisioningParams{};
  p.omega = 0.9;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("utility values") {
  ProvisioningParams p;  // A=20, B=0.2
  // s(1) = 0.2*ln(21) per served token
  CHECK(utility(2.0, 1.0, p) == doctest::Approx(0.6089044875446843).epsilon(1e-12));
  CHECK(utility(0.0, 5.0, p) == 0.0);  // s(0) = B*ln(1) = 0
  CHECK(utility(1000.0, 1000.0, p) == doctest::Approx(0.2 * std::log(21.0) * 1000.0).epsilon(1e-12));
  CHECK(utility(5.0, 0.0, p) == 0.0);  // zero-workload convention
  CHECK_THROWS_AS(utility(-1.0, 1.0, p), std::domain_error);
  CHECK_THROWS_AS(utility(1.0, -1.0, p), std::domain_error);
}

TEST_CASE("cost values") {
  ProvisioningParams p;
  CHECK(cost(1000.0, 1000.0, p) == doctest::Approx(1.1 * 4e-6 * 1000.0).epsilon(1e-12));
  CHECK(cost(0.0, 1000.0, p) == 0.0);
  CHECK(cost(1500.0, 1000.0, p) == doctest::Approx(1.1 * (4e-6 * 1000.0 + 1.4e-6 * 500.0)).epsilon(1e-12));
  CHECK(cost(1500.0, 1000.0, p) == doctest::Approx(5.17e-3).epsilon(1e-9));
  CHECK_THROWS_AS(cost(-1.0, 0.0, p), std::domain_error);
}

TEST_CASE("net_reward composes utility and cost") {
  ProvisioningParams p;
  const std::vector<double> zeros(4, 0.0);
  CHECK(net_reward(zeros, zeros, p) == 0.0);

  const std::vector<double> a{1000.0};
  const std::vector<double> c{1000.0};
  CHECK(net_reward(a, c, p) ==
        doctest::Approx(0.2 * std::log(21.0) * 1000.0 - 0.34 * 4.4e-3).epsilon(1e-12));

  const std::vector<double> wrong{1.0, 2.0};
  CHECK_THROWS_AS(net_reward(a, wrong, p), std::invalid_argument);
}

TEST_CASE("net_reward_terms splits the two sums") {
  ProvisioningParams p;
  const std::vector<double> a{1000.0, 500.0};
  const std::vector<double> c{800.0, 700.0};
  const RewardTerms t = net_reward_terms(a, c, p);
  CHECK(t.net() == doctest::Approx(net_reward(a, c, p)).epsilon(1e-12));
  CHECK(t.utility_sum > 0.0);
  CHECK(t.cost_sum > 0.0);
}

TEST_CASE("optimal_decision closed form beats the grid") {
  ProvisioningParams p;
  // the interior stationary point sits far above c_hat at these constants
  CHECK(optimal_capacity(1e5, p) == doctest::Approx(1e5));
  CHECK(optimal_capacity(0.0, p) == p.a_min);
  CHECK(optimal_capacity(1e7, p) == p.a_max);

  RandomStream s(21);
  for (int i = 0; i < 50; ++i) {
    const double c = s.uniform() * p.a_max;
    const double a_star = optimal_capacity(c, p);
    const double r_star = slot_reward(a_star, c, p);
    const double r_grid = slot_reward(grid_best_capacity(c, p), c, p);
    CHECK(r_star >= r_grid - 1e-9 * std::abs(r_grid));
  }
}

TEST_CASE("optimal_decision with a binding interior optimum") {
  // cost weight large enough that the stationary point sits below c_hat
  ProvisioningParams p;
  p.gamma = 1e5;
  const double slope = decision_slope(p);
  CHECK(slope < 1.0);
  CHECK(slope > 0.0);
  RandomStream s(22);
  for (int i = 0; i < 50; ++i) {
    const double c = 1e3 + s.uniform() * (p.a_max - 1e3);
    const double a_star = optimal_capacity(c, p);
    const double r_star = slot_reward(a_star, c, p);
    const double r_grid = slot_reward(grid_best_capacity(c, p), c, p);
    CHECK(r_star >= r_grid - 1e-9 * std::abs(r_grid));
  }
}

TEST_CASE("oracle_reward dominates arbitrary decisions") {
  ProvisioningParams p;
  p.n_slots = 6;
  RandomStream s(23);
  std::vector<double> c(6);
  for (auto& v : c) v = s.uniform() * p.a_max;
  const double oracle = oracle_reward(c, p);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> a(6);
    for (auto& v : a) v = p.a_min + s.uniform() * (p.a_max - p.a_min);
    CHECK(oracle >= net_reward(a, c, p) - 1e-9);
  }
  // constant workload matches the grid search to 1e-9 relative
  const std::vector<double> c2(6, 2e5);
  const double direct = oracle_reward(c2, p);
  double grid = 0.0;
  for (const double v : c2) grid += slot_reward(grid_best_capacity(v, p), v, p);
  CHECK(std::abs(direct - grid) <= 1e-9 * std::abs(grid) + 1e-9);
}

TEST_CASE("oracle handles all-zero workloads") {
  ProvisioningParams p;
  const std::vector<double> zeros(5, 0.0);
  CHECK(oracle_reward(zeros, p) == doctest::Approx(0.0));  // a_min = 0
  p.a_min = 100.0;
  const double expect = -p.gamma * p.omega * p.p_idle * p.a_min * 5;
  CHECK(oracle_reward(zeros, p) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("regret identities and hand case") {
  const std::vector<double> oracle{20.0, 30.0, 40.0};
  SUBCASE("alg equals oracle") {
    const RegretReport r = regret(oracle, oracle);
    CHECK(r.regret == 0.0);
    CHECK(r.defined);
  }
  SUBCASE("half rewards give one half") {
    std::vector<double> half;
    for (const double v : oracle) half.push_back(v / 2.0);
    CHECK(regret(half, oracle).regret == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("hand-computed 3-element case") {
    // means: alg 20, oracle 30 -> regret 1/3
    const std::vector<double> alg{10.0, 20.0, 30.0};
    CHECK(regret(alg, oracle).regret == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("duplicating the dataset leaves regret unchanged") {
    const std::vector<double> alg{10.0, 20.0, 30.0};
    std::vector<double> alg2 = alg, oracle2 = oracle;
    alg2.insert(alg2.end(), alg.begin(), alg.end());
    oracle2.insert(oracle2.end(), oracle.begin(), oracle.end());
    CHECK(regret(alg2, oracle2).regret == doctest::Approx(regret(alg, oracle).regret).epsilon(1e-15));
  }
  SUBCASE("non-positive oracle mean is flagged") {
    const std::vector<double> bad{-1.0, 1.0, 0.0};
    const RegretReport r = regret(bad, bad);
    CHECK(r.regret == 0.0);  // equal means short-circuit
    const std::vector<double> alg{0.0, 0.0, -1.0};
    const RegretReport r2 = regret(alg, bad);
    CHECK_FALSE(r2.defined);
  }
}

TEST_CASE("continuity and monotonicity at the kink") {
  ProvisioningParams p;
  const double c = 12345.0;
  // the two branch formulas agree exactly at a = c
  CHECK(p.b_scale * std::log(p.a_curve * (c / c) + 1.0) * c ==
        doctest::Approx(p.b_scale * std::log(p.a_curve + 1.0) * c).epsilon(1e-15));
  // nearby values differ by no more than the slope allows
  const double eps = 1e-7 * c;
  CHECK(std::abs(utility(c + eps, c, p) - utility(c - eps, c, p)) <= 2.0 * eps * utility_da(c - eps, c, p) + 1e-9);
  CHECK(std::abs(cost(c + eps, c, p) - cost(c - eps, c, p)) <= 2.0 * eps * p.omega * p.p_act + 1e-12);
  // utility non-decreasing in a up to c, constant after
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double a = c * i / 100.0;
    const double u = utility(a, c, p);
    CHECK(u >= prev - 1e-12);
    prev = u;
  }
  CHECK(utility(2 * c, c, p) == doctest::Approx(utility(c, c, p)).epsilon(1e-12));
  // cost non-decreasing in a
  CHECK(cost(0.5 * c, c, p) <= cost(c, c, p));
  CHECK(cost(c, c, p) <= cost(2 * c, c, p));
}

TEST_CASE("per-slot reward is concave below c and affine above") {
  ProvisioningParams p;
  const double c = 2e5;
  RandomStream s(24);
  for (int i = 0; i < 20; ++i) {
    const double a1 = s.uniform() * c;
    const double a2 = s.uniform() * c;
    const double mid = slot_reward(0.5 * (a1 + a2), c, p);
    const double chord = 0.5 * (slot_reward(a1, c, p) + slot_reward(a2, c, p));
    CHECK(mid >= chord - 1e-9);
  }
  // slope above c equals -gamma*omega*P_idle
  const double slope = (slot_reward(c + 2000.0, c, p) - slot_reward(c + 1000.0, c, p)) / 1000.0;
  CHECK(slope == doctest::Approx(-p.gamma * p.omega * p.p_idle).epsilon(1e-9));
}

TEST_CASE("derivative helpers match finite differences away from kinks") {
  ProvisioningParams p;
  p.gamma = 2e4;  // make both terms visible
  RandomStream s(25);
  for (int i = 0; i < 30; ++i) {
    const double c = 1e4 + s.uniform() * 3e5;
    double a = 1e3 + s.uniform() * 3.8e5;
    if (std::abs(a - c) < 2e3) a = c + 5e3;  // keep away from the kink
    const double h = 1.0;
    const double fd_a = (slot_reward(a + h, c, p) - slot_reward(a - h, c, p)) / (2 * h);
    CHECK(slot_reward_da(a, c, p) == doctest::Approx(fd_a).epsilon(1e-6));
    const double fd_c = (slot_reward(a, c + h, p) - slot_reward(a, c - h, p)) / (2 * h);
    CHECK(slot_reward_dc(a, c, p) == doctest::Approx(fd_c).epsilon(1e-5));
  }
}

TEST_SUITE_END();
