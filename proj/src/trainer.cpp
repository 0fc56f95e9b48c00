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

#include "drdfl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drdfl/errors.hpp"
#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::trainer {

using data::TraceDataset;
using diffusion::DiffusionModel;
using predictor::Predictor;
using predictor::WindowedSample;

provisioning::RegretReport evaluate_regret(const Predictor& pred, const TraceDataset& d,
                                           const provisioning::ProvisioningParams& prov) {
  d.validate();
  const auto windows = predictor::windows_of(d);
  if (windows.empty()) throw std::invalid_argument("evaluate_regret: empty dataset");
  std::vector<double> alg(windows.size(), 0.0), opt(windows.size(), 0.0);
  parallel::for_range(static_cast<int64_t>(windows.size()), [&](int64_t i) {
    try {
      const auto& w = windows[i];
      const std::vector<double> c_hat = pred.predict(w.context);
      const provisioning::DecisionVector dec = provisioning::optimal_decision(c_hat, prov);
      alg[i] = provisioning::net_reward(dec.capacities, w.label, prov);
      opt[i] = provisioning::oracle_reward(w.label, prov);
    } catch (const std::exception&) {
      alg[i] = std::numeric_limits<double>::quiet_NaN();
      opt[i] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  provisioning::RegretReport rep = provisioning::regret(alg, opt);
  rep.dataset_id = d.meta.label;
  return rep;
}

namespace {

TraceDataset dataset_from_samples(const Matrix& tokens, const TraceDataset& like) {
  TraceDataset d = like;
  d.sequences.clear();
  for (int i = 0; i < tokens.rows; ++i) {
    d.sequences.emplace_back(tokens.row(i), tokens.row(i) + tokens.cols);
  }
  d.meta.label = like.meta.label + "+adversarial";
  d.validate();
  return d;
}

}  // namespace

TrainResult run_3d_learning(const TraceDataset& s0, const OuterConfig& cfg, const DiffusionModel* theta0_in,
                            const EpochCallback& on_epoch) {
  s0.validate();
  if (s0.size() == 0) throw std::invalid_argument("run_3d_learning: empty dataset");
  if (cfg.epochs < 0) throw std::invalid_argument("run_3d_learning: negative epoch count");
  if (s0.context != cfg.pred.context || s0.horizon != cfg.pred.horizon) {
    throw std::invalid_argument("run_3d_learning: dataset windows do not match the predictor config");
  }

  RandomStream root(cfg.seed);
  TrainResult result{Predictor(cfg.pred), {}, std::nullopt};

  // Reference model: supplied or trained here.
  DiffusionModel theta0;
  if (theta0_in != nullptr) {
    theta0 = theta0_in->clone();
  } else {
    RandomStream ds = root.child("diffusion");
    theta0 = diffusion::train_reference(s0, cfg.diff, ds).model;
  }
  if (theta0.seq_len() != s0.length) {
    throw std::invalid_argument("run_3d_learning: reference model length mismatch");
  }

  // Held-out slice for the logged validation regret.
  TraceDataset train_set = s0;
  TraceDataset val_set;
  const size_t val_count = static_cast<size_t>(std::floor(cfg.validation_fraction * s0.size()));
  if (val_count >= 2) {
    auto parts = data::split(s0, {1.0 - cfg.validation_fraction, cfg.validation_fraction},
                             mix64(cfg.seed, hash_tag("val-split")));
    train_set = std::move(parts[0]);
    val_set = std::move(parts[1]);
  }

  const int adv_size = cfg.adversarial_set_size > 0 ? cfg.adversarial_set_size
                                                    : static_cast<int>(train_set.size());
  nn::AdamState pred_opt;
  int consecutive_failures = 0;
  std::optional<DiffusionModel> carried;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      // (1) inner maximization
      DiffusionModel adversary;
      if (cfg.freeze_diffusion) {
        adversary = theta0.clone();
        adversary.tail_len = cfg.ppo.tail_len;
        adversary.tail_sigma2 = cfg.ppo.tail_sigma2;
      } else if (cfg.carry_theta && carried.has_value()) {
        RandomStream is = root.child("imax", static_cast<uint64_t>(epoch));
        imax::ImaxResult ir = imax::imax(result.predictor, *carried, train_set, cfg.dual, cfg.ppo,
                                         cfg.prov, is);
        rec.j_final = ir.records.empty() ? ir.j_reference : ir.records.back().j_value;
        rec.alpha_final = ir.dual.alpha;
        rec.dual_history = ir.dual.history;
        adversary = std::move(ir.model);
      } else {
        RandomStream is = root.child("imax", static_cast<uint64_t>(epoch));
        imax::ImaxResult ir = imax::imax(result.predictor, theta0, train_set, cfg.dual, cfg.ppo,
                                         cfg.prov, is);
        rec.j_final = ir.records.empty() ? ir.j_reference : ir.records.back().j_value;
        rec.alpha_final = ir.dual.alpha;
        rec.dual_history = ir.dual.history;
        adversary = std::move(ir.model);
      }

      // (2) adversarial dataset
      RandomStream ss = root.child("adv", static_cast<uint64_t>(epoch));
      const diffusion::SampleResult gen = diffusion::sample(adversary, adv_size, ss);
      const TraceDataset s_theta = dataset_from_samples(gen.tokens, train_set);
      const auto windows = predictor::windows_of(s_theta);
      rec.mean_adversarial_workload =
          kernels::reduce_sum(gen.tokens.data) / static_cast<double>(gen.tokens.size());

      // (3) one predictor pass
      RandomStream ps = root.child("pred", static_cast<uint64_t>(epoch));
      rec.mean_adversarial_loss =
          predictor::train_one_pass(result.predictor, windows, cfg.prov, cfg.pred_train, pred_opt, ps);

      if (cfg.carry_theta) carried = adversary.clone();
      consecutive_failures = 0;
    } catch (const OptimizationError& e) {
      rec.skipped = true;
      ++consecutive_failures;
      if (consecutive_failures >= 2) {
        throw OptimizationError(std::string("two consecutive inner-maximization failures: ") + e.what());
      }
    }

    if (val_set.size() >= 2) {
      rec.validation_regret = evaluate_regret(result.predictor, val_set, cfg.prov).regret;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.theta0 = std::move(theta0);
  return result;
}

TrainResult run_dfl(const TraceDataset& s0, const OuterConfig& cfg) {
  s0.validate();
  if (s0.size() == 0) throw std::invalid_argument("run_dfl: empty dataset");
  if (s0.context != cfg.pred.context || s0.horizon != cfg.pred.horizon) {
    throw std::invalid_argument("run_dfl: dataset windows do not match the predictor config");
  }
  TrainResult result{Predictor(cfg.pred), {}, std::nullopt};
  const auto windows = predictor::windows_of(s0);
  RandomStream stream(cfg.seed);
  RandomStream ts = stream.child("dfl-train");
  const std::vector<double> curve = predictor::train(result.predictor, windows, cfg.prov, cfg.pred_train, ts);
  for (size_t e = 0; e < curve.size(); ++e) {
    EpochRecord rec;
    rec.epoch = static_cast<int>(e) + 1;
    rec.mean_adversarial_loss = curve[e];
    result.log.push_back(rec);
  }
  return result;
}

}  // namespace drdfl::trainer
