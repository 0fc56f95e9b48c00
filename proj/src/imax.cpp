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

#include "drdfl/imax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drdfl/errors.hpp"
#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::imax {

using diffusion::DiffusionModel;
using diffusion::ReverseTrajectory;

void DualState::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("dual alpha must be non-negative");
  if (!(eta > 0.0)) throw std::invalid_argument("dual step size must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("dual budget must be positive");
}

void PpoConfig::validate() const {
  if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("clip parameter must lie in (0, 1)");
  if (tail_len < 1) throw std::invalid_argument("tail length must be at least 1");
  if (inner_epochs < 1) throw std::invalid_argument("inner epochs must be at least 1");
  if (batch < 1) throw std::invalid_argument("trajectory batch must be at least 1");
  if (!(tail_sigma2 > 0.0)) throw std::invalid_argument("tail sampling variance must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (estimator != "ppo" && estimator != "vpg") throw std::invalid_argument("estimator must be ppo or vpg");
}

double clipped_surrogate_term(double ratio, double loss, double kappa) {
  return std::min(ratio * loss, std::clamp(ratio, 1.0 - kappa, 1.0 + kappa) * loss);
}

double decision_loss_of_sample(std::span<const double> x0_tokens, const predictor::Predictor& pred,
                               const provisioning::ProvisioningParams& prov) {
  const auto& cfg = pred.config();
  if (static_cast<int>(x0_tokens.size()) != cfg.context + cfg.horizon) {
    throw std::invalid_argument("generated sequence length must equal W + N");
  }
  const predictor::WindowedSample s = predictor::slice_sample(x0_tokens, cfg.context);
  const std::vector<double> c_hat = pred.predict(s.context);
  const provisioning::DecisionVector dec = provisioning::optimal_decision(c_hat, prov);
  return -provisioning::net_reward(dec.capacities, s.label, prov);
}

namespace {

// Every tail transition of every trajectory as one batch of network rows.
struct MultiTail {
  Matrix x;
  Matrix target;
  std::vector<int> steps;
  std::vector<double> inv_sigma2;
  std::vector<int> traj_of_row;
  int n_traj = 0;
};

MultiTail build_multi_tail(const DiffusionModel& m, std::span<const ReverseTrajectory> trajs,
                           int tail_len) {
  const int d = m.seq_len();
  MultiTail b;
  b.n_traj = static_cast<int>(trajs.size());
  const int rows = b.n_traj * tail_len;
  b.x = Matrix(rows, d);
  b.target = Matrix(rows, d);
  b.steps.resize(rows);
  b.inv_sigma2.resize(rows);
  b.traj_of_row.resize(rows);
  int row = 0;
  for (int i = 0; i < b.n_traj; ++i) {
    const auto& traj = trajs[i];
    if (traj.tail_len != tail_len) {
      throw std::invalid_argument("trajectory tail length does not match the configured T'");
    }
    traj.validate(d);
    for (int t = tail_len; t >= 1; --t) {
      const auto& xt = traj.state_at(t);
      const auto& xprev = traj.state_at(t - 1);
      std::copy(xt.begin(), xt.end(), b.x.row(row));
      std::copy(xprev.begin(), xprev.end(), b.target.row(row));
      b.steps[row] = t;
      const double s2 = m.sigma2_for_step(t);
      if (!(s2 > 0.0)) throw ConfigError("ppo: zero sampling variance in the tail");
      b.inv_sigma2[row] = 1.0 / s2;
      b.traj_of_row[row] = i;
      ++row;
    }
  }
  return b;
}

// Per-trajectory log-prob sums under one network; mu recomputed from the
// eps-prediction on every row.
std::vector<double> tail_logprobs(const DiffusionModel& m, const nn::DenoiserNet& net, const MultiTail& b,
                                  Matrix* mu_out = nullptr,
                                  std::unique_ptr<nn::DenoiserCache>* cache = nullptr) {
  const Matrix eps = net.forward(b.x, b.steps, m.schedule.t_max, cache);
  std::vector<double> logp(b.n_traj, 0.0);
  if (mu_out != nullptr) *mu_out = Matrix(b.x.rows, b.x.cols);
  for (int r = 0; r < b.x.rows; ++r) {
    const int t = b.steps[r];
    const double cx = m.schedule.post_mean_coef_x(t);
    const double ce = m.schedule.post_mean_coef_eps(t);
    const double* xrow = b.x.row(r);
    const double* erow = eps.row(r);
    const double* trow = b.target.row(r);
    double sq = 0.0;
    for (int j = 0; j < b.x.cols; ++j) {
      const double mu = cx * xrow[j] + ce * erow[j];
      if (mu_out != nullptr) mu_out->at(r, j) = mu;
      const double diff = trow[j] - mu;
      sq += diff * diff;
    }
    logp[b.traj_of_row[r]] -= 0.5 * b.inv_sigma2[r] * sq;
  }
  return logp;
}

std::vector<double> standardize(std::span<const double> f, std::span<const char> keep) {
  double mean = 0.0;
  int n = 0;
  for (size_t i = 0; i < f.size(); ++i) {
    if (keep[i]) {
      mean += f[i];
      ++n;
    }
  }
  mean /= std::max(1, n);
  double var = 0.0;
  for (size_t i = 0; i < f.size(); ++i) {
    if (keep[i]) var += (f[i] - mean) * (f[i] - mean);
  }
  var /= std::max(1, n);
  const double sd = std::sqrt(var);
  std::vector<double> out(f.size(), 0.0);
  for (size_t i = 0; i < f.size(); ++i) {
    if (keep[i]) out[i] = sd > 1e-12 ? (f[i] - mean) / sd : 0.0;
  }
  return out;
}

}  // namespace

double ppo_objective(const DiffusionModel& tuned, const DiffusionModel& reference,
                     std::span<const ReverseTrajectory> trajectories, std::span<const double> losses,
                     const PpoConfig& cfg, std::vector<double>* grad, double* clip_fraction,
                     size_t* dropped) {
  if (trajectories.empty()) throw std::invalid_argument("ppo_objective: no trajectories");
  if (trajectories.size() != losses.size()) {
    throw std::invalid_argument("ppo_objective: one loss per trajectory required");
  }
  const MultiTail batch = build_multi_tail(tuned, trajectories, cfg.tail_len);
  const int n = batch.n_traj;

  std::unique_ptr<nn::DenoiserCache> cache;
  Matrix mu_tuned;
  const std::vector<double> logp_tuned =
      tail_logprobs(tuned, *tuned.net, batch, &mu_tuned, grad != nullptr ? &cache : nullptr);
  const std::vector<double> logp_ref = tail_logprobs(tuned, *reference.net, batch);

  std::vector<double> ratio(n, 0.0);
  std::vector<char> keep(n, 0);
  size_t drop_count = 0;
  for (int i = 0; i < n; ++i) {
    const double r = std::exp(logp_tuned[i] - logp_ref[i]);
    ratio[i] = r;
    if (std::isfinite(r) && std::isfinite(losses[i])) {
      keep[i] = 1;
    } else {
      ++drop_count;
    }
  }
  if (dropped != nullptr) *dropped = drop_count;
  if (drop_count == static_cast<size_t>(n)) {
    throw OptimizationError("ppo_objective: every trajectory was dropped (non-finite ratios)");
  }
  const int kept = n - static_cast<int>(drop_count);

  std::vector<double> f(losses.begin(), losses.end());
  if (cfg.reward_standardize) f = standardize(f, keep);

  double value = 0.0;
  int clipped = 0;
  std::vector<double> coef(n, 0.0);  // gradient gate * f * r / kept
  const double lo = 1.0 - cfg.kappa;
  const double hi = 1.0 + cfg.kappa;
  for (int i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    const double r = ratio[i];
    const double raw = r * f[i];
    const double clip = std::clamp(r, lo, hi) * f[i];
    value += clipped_surrogate_term(r, f[i], cfg.kappa);
    if (r < lo || r > hi) ++clipped;
    if (raw <= clip) coef[i] = f[i] * r / kept;
  }
  value /= kept;
  if (clip_fraction != nullptr) *clip_fraction = static_cast<double>(clipped) / kept;

  if (grad != nullptr) {
    Matrix dout(batch.x.rows, batch.x.cols);
    for (int r = 0; r < batch.x.rows; ++r) {
      const int i = batch.traj_of_row[r];
      if (coef[i] == 0.0) continue;
      const int t = batch.steps[r];
      const double ce = tuned.schedule.post_mean_coef_eps(t);
      const double* trow = batch.target.row(r);
      const double* mrow = mu_tuned.row(r);
      double* drow = dout.row(r);
      // d logp / d eps_hat = (x_{t-1} - mu) / sigma^2 * ce, scaled by coef
      for (int j = 0; j < batch.x.cols; ++j) {
        drow[j] = coef[i] * batch.inv_sigma2[r] * (trow[j] - mrow[j]) * ce;
      }
    }
    tuned.net->backward(*cache, dout, grad);
  }
  return value;
}

std::vector<double> vpg_gradient(const DiffusionModel& current,
                                 std::span<const ReverseTrajectory> trajectories,
                                 std::span<const double> losses, size_t* dropped) {
  if (trajectories.empty()) throw std::invalid_argument("vpg_gradient: no trajectories");
  if (trajectories.size() != losses.size()) {
    throw std::invalid_argument("vpg_gradient: one loss per trajectory required");
  }
  std::vector<double> grad(current.net->params().size(), 0.0);
  size_t drop_count = 0;
  std::vector<size_t> kept;
  for (size_t i = 0; i < trajectories.size(); ++i) {
    if (std::isfinite(losses[i])) {
      kept.push_back(i);
    } else {
      ++drop_count;
    }
  }
  if (dropped != nullptr) *dropped = drop_count;
  if (kept.empty()) throw OptimizationError("vpg_gradient: every trajectory was dropped");
  for (const size_t i : kept) {
    diffusion::log_prob_tail_grad(current, trajectories[i], losses[i] / static_cast<double>(kept.size()),
                                  &grad);
  }
  return grad;
}

StepStats lagrangian_step(DiffusionModel& tuned, const DiffusionModel& reference, double alpha,
                          const Matrix& s0_train_norm, std::span<const ReverseTrajectory> trajectories,
                          std::span<const double> losses, const PpoConfig& cfg, nn::AdamState& opt,
                          RandomStream& stream, const predictor::Predictor* pred,
                          const provisioning::ProvisioningParams* prov) {
  if (alpha < 0.0) throw std::invalid_argument("lagrangian_step: alpha must be non-negative");
  StepStats stats;
  auto& params = tuned.net->params();
  std::vector<double> grad(params.size(), 0.0);
  std::vector<double> jgrad(params.size(), 0.0);
  double lr = cfg.lr;
  uint64_t draw = 0;

  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    const std::vector<double> snapshot = params;
    bool done = false;
    for (int attempt = 0; attempt < 2 && !done; ++attempt) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(jgrad.begin(), jgrad.end(), 0.0);
      double objective = 0.0;
      double clip_fraction = 0.0;
      size_t dropped = 0;
      bool finite = true;
      try {
        if (cfg.estimator == "ppo") {
          objective = ppo_objective(tuned, reference, trajectories, losses, cfg, &grad, &clip_fraction,
                                    &dropped);
        } else {
          if (pred == nullptr || prov == nullptr) {
            throw std::invalid_argument("vpg estimator needs the predictor and provisioning params");
          }
          RandomStream vs = stream.child("vpg", draw);
          const diffusion::SampleResult fresh =
              diffusion::sample(tuned, cfg.batch, vs, {.tail_record = cfg.tail_len});
          std::vector<double> f(fresh.trajectories.size(), 0.0);
          for (size_t i = 0; i < f.size(); ++i) {
            f[i] = decision_loss_of_sample(
                std::span<const double>(fresh.tokens.row(static_cast<int>(i)), fresh.tokens.cols), *pred,
                *prov);
          }
          std::vector<char> all(f.size(), 1);
          if (cfg.reward_standardize) f = standardize(f, all);
          grad = vpg_gradient(tuned, fresh.trajectories, f, &dropped);
          for (size_t i = 0; i < f.size(); ++i) objective += f[i] / f.size();
        }

        // score-matching term on a training minibatch
        const int n = s0_train_norm.rows;
        const int mb = std::max(1, std::min(cfg.j_batch, n));
        RandomStream pick = stream.child("jmb", draw);
        Matrix minibatch(mb, s0_train_norm.cols);
        for (int r = 0; r < mb; ++r) {
          const int idx = static_cast<int>(pick.uniform_int(0, n - 1));
          std::copy(s0_train_norm.row(idx), s0_train_norm.row(idx) + s0_train_norm.cols, minibatch.row(r));
        }
        RandomStream jstream = stream.child("jsm", draw);
        const double j_term = diffusion::score_matching_loss(tuned, minibatch, jstream, &jgrad);
        ++draw;

        finite = std::isfinite(objective) && std::isfinite(j_term);
        if (finite) {
          for (size_t i = 0; i < grad.size(); ++i) {
            grad[i] -= alpha * jgrad[i];
            if (!std::isfinite(grad[i])) {
              finite = false;
              break;
            }
          }
        }
        if (finite) {
          nn::adam_step(params, grad, opt, lr, /*sign=*/+1.0);
          stats.objective = objective;
          stats.j_term = j_term;
          stats.clip_fraction = clip_fraction;
          stats.dropped += dropped;
          done = true;
        }
      } catch (const OptimizationError&) {
        throw;
      } catch (const ConfigError&) {
        throw;
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::exception&) {
        finite = false;
      }
      if (!finite) {
        params = snapshot;
        if (attempt == 1) {
          throw OptimizationError("lagrangian_step: non-finite loss twice in a row");
        }
        lr *= 0.5;
      }
    }
  }
  return stats;
}

void dual_update(DualState& dual, double j_current) {
  dual.alpha = std::max(dual.alpha + dual.eta * (j_current - dual.epsilon), 0.0);
  dual.history.emplace_back(j_current, dual.alpha);
}

ImaxResult imax(const predictor::Predictor& pred, const DiffusionModel& theta0,
                const data::TraceDataset& s0, const DualConfig& dual_cfg, const PpoConfig& ppo_cfg,
                const provisioning::ProvisioningParams& prov, RandomStream& stream,
                const IterCallback& on_iteration) {
  ppo_cfg.validate();
  s0.validate();
  if (theta0.seq_len() != s0.length) throw std::invalid_argument("imax: model/dataset length mismatch");
  if (ppo_cfg.tail_len > theta0.schedule.t_max) {
    throw std::invalid_argument("imax: tail length exceeds the schedule");
  }
  if (dual_cfg.iterations < 0) throw std::invalid_argument("imax: negative iteration count");

  // Held-out slice of S0 for the dual's J evaluations, fixed by eval_seed.
  const Matrix all = diffusion::normalize_dataset(s0);
  std::vector<int> order(all.rows);
  std::iota(order.begin(), order.end(), 0);
  RandomStream eval_pick(ppo_cfg.eval_seed);
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1],
              order[static_cast<size_t>(eval_pick.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  }
  const int eval_count =
      std::max(1, static_cast<int>(std::floor(ppo_cfg.eval_fraction * static_cast<double>(all.rows))));
  Matrix eval_m(eval_count, all.cols);
  for (int r = 0; r < eval_count; ++r) {
    std::copy(all.row(order[r]), all.row(order[r]) + all.cols, eval_m.row(r));
  }
  const int train_count = all.rows - eval_count;
  Matrix train_m(std::max(1, train_count), all.cols);
  if (train_count > 0) {
    for (int r = 0; r < train_count; ++r) {
      std::copy(all.row(order[eval_count + r]), all.row(order[eval_count + r]) + all.cols, train_m.row(r));
    }
  } else {
    std::copy(eval_m.row(0), eval_m.row(0) + all.cols, train_m.row(0));
  }

  ImaxResult result;
  DiffusionModel reference = theta0.clone();
  reference.tail_len = ppo_cfg.tail_len;
  reference.tail_sigma2 = ppo_cfg.tail_sigma2;

  const auto eval_j = [&](const DiffusionModel& m) {
    RandomStream es(mix64(ppo_cfg.eval_seed, 0x4a5eedULL));
    return diffusion::score_matching_loss(m, eval_m, es);
  };
  result.j_reference = eval_j(reference);
  result.epsilon_effective =
      dual_cfg.budget_mode == "calibrated" ? result.j_reference + dual_cfg.epsilon : dual_cfg.epsilon;
  if (dual_cfg.budget_mode != "calibrated" && dual_cfg.budget_mode != "absolute") {
    throw std::invalid_argument("budget mode must be calibrated or absolute");
  }

  result.model = reference.clone();
  result.model.head_net = theta0.net->clone();
  result.dual = DualState{dual_cfg.alpha0, dual_cfg.eta, result.epsilon_effective, {}};
  result.dual.validate();

  nn::AdamState opt;
  for (int k = 1; k <= dual_cfg.iterations; ++k) {
    RandomStream tstream = stream.child("traj", static_cast<uint64_t>(k));
    const diffusion::SampleResult batch =
        diffusion::sample(reference, ppo_cfg.batch, tstream, {.tail_record = ppo_cfg.tail_len});
    std::vector<double> losses(batch.trajectories.size(), 0.0);
    parallel::for_range(static_cast<int64_t>(losses.size()), [&](int64_t i) {
      // A failed sample becomes NaN and is dropped by the surrogate.
      try {
        losses[i] = decision_loss_of_sample(
            std::span<const double>(batch.tokens.row(static_cast<int>(i)), batch.tokens.cols), pred, prov);
      } catch (const std::exception&) {
        losses[i] = std::numeric_limits<double>::quiet_NaN();
      }
    });

    RandomStream sstream = stream.child("step", static_cast<uint64_t>(k));
    const StepStats stats = lagrangian_step(result.model, reference, result.dual.alpha, train_m,
                                            batch.trajectories, losses, ppo_cfg, opt, sstream, &pred, &prov);
    result.dropped_trajectories += stats.dropped;

    const double j_k = eval_j(result.model);
    dual_update(result.dual, j_k);

    IterRecord rec;
    rec.k = k;
    rec.j_value = j_k;
    rec.alpha = result.dual.alpha;
    rec.mean_loss = kernels::reduce_sum(losses) / static_cast<double>(losses.size());
    rec.clip_fraction = stats.clip_fraction;
    result.records.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  return result;
}

}  // namespace drdfl::imax
