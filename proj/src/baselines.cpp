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

#include "drdfl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "drdfl/errors.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::baselines {

using predictor::Predictor;
using predictor::WindowedSample;
using provisioning::ProvisioningParams;

namespace {

double dual_value(std::span<const double> f, double fmax, double beta, double epsilon) {
  // beta * log(mean exp(f/beta)) + beta * epsilon, with exp arguments <= 0.
  double acc = 0.0;
  for (const double v : f) acc += std::exp((v - fmax) / beta);
  return fmax + beta * std::log(acc / static_cast<double>(f.size())) + beta * epsilon;
}

}  // namespace

KlWorstCase kl_worst_case(std::span<const double> losses, double epsilon, const KlDroConfig& cfg) {
  if (losses.empty()) throw std::invalid_argument("kl_worst_case: no losses");
  if (epsilon < 0.0) throw std::invalid_argument("kl_worst_case: epsilon must be non-negative");
  for (const double v : losses) {
    if (!std::isfinite(v)) throw std::invalid_argument("kl_worst_case: losses must be finite");
  }
  const size_t n = losses.size();
  KlWorstCase out;
  const double fmax = *std::max_element(losses.begin(), losses.end());
  const double fmin = *std::min_element(losses.begin(), losses.end());
  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);

  if (epsilon == 0.0 || fmax - fmin < 1e-15 * std::max(1.0, std::abs(fmax))) {
    out.value = epsilon == 0.0 ? mean : fmax;
    out.weights.assign(n, 1.0 / static_cast<double>(n));
    out.beta = cfg.beta_hi;
    return out;
  }

  // Golden-section on log(beta); the dual is convex in beta.
  const double scale = std::max(fmax - fmin, 1e-12);
  double lo = std::log(cfg.beta_lo * scale);
  double hi = std::log(cfg.beta_hi * scale);
  const double gr = 0.6180339887498949;
  double x1 = hi - gr * (hi - lo);
  double x2 = lo + gr * (hi - lo);
  double f1 = dual_value(losses, fmax, std::exp(x1), epsilon);
  double f2 = dual_value(losses, fmax, std::exp(x2), epsilon);
  while (hi - lo > cfg.tol) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = dual_value(losses, fmax, std::exp(x1), epsilon);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = dual_value(losses, fmax, std::exp(x2), epsilon);
    }
  }
  double beta = std::exp(0.5 * (lo + hi));
  double best = dual_value(losses, fmax, beta, epsilon);
  // The infimum can sit at the beta -> 0 boundary (all mass on the max loss).
  const double beta_floor = cfg.beta_lo * scale;
  const double at_floor = dual_value(losses, fmax, beta_floor, epsilon);
  if (at_floor < best) {
    best = at_floor;
    beta = beta_floor;
  }
  out.value = best;
  out.beta = beta;
  out.weights.resize(n);
  double wsum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    out.weights[i] = std::exp((losses[i] - fmax) / beta);
    wsum += out.weights[i];
  }
  for (double& w : out.weights) w /= wsum;
  return out;
}

void AugmentConfig::validate() const {
  if (!(magnitude >= 0.0)) throw std::invalid_argument("augment magnitude must be non-negative");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw std::invalid_argument("mask probability must be in [0, 1]");
  if (perlin_lattice < 2) throw std::invalid_argument("perlin lattice must be at least 2");
}

data::TraceDataset augment(const data::TraceDataset& s0, const AugmentConfig& cfg, uint64_t seed) {
  cfg.validate();
  s0.validate();
  data::CorruptionSpec spec;
  spec.kind = cfg.kind;
  spec.parameter = cfg.kind == data::NoiseKind::kCutout ? cfg.mask_prob : cfg.magnitude;
  spec.perlin_lattice = cfg.perlin_lattice;
  const data::TraceDataset noisy = data::apply_noise(s0, spec, seed);
  data::TraceDataset out = s0;
  out.sequences.insert(out.sequences.end(), noisy.sequences.begin(), noisy.sequences.end());
  out.meta.label = s0.meta.label + "+da-" + data::to_string(cfg.kind);
  out.validate();
  return out;
}

std::vector<double> train_kl_dro(Predictor& pred, std::span<const WindowedSample> s0,
                                 const ProvisioningParams& prov, const BaselineTrainConfig& cfg,
                                 RandomStream& stream) {
  if (s0.empty()) throw std::invalid_argument("train_kl_dro: empty dataset");
  const int n = static_cast<int>(s0.size());
  const int batch = std::max(1, std::min(cfg.train.batch, n));
  nn::AdamState opt;
  std::vector<double> grad(pred.net().params().size(), 0.0);
  RandomStream shuffle = stream.child("shuffle");
  std::vector<double> curve;

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      std::vector<WindowedSample> mb(count);
      for (int r = 0; r < count; ++r) mb[r] = s0[order[start + r]];
      const std::vector<double> f = predictor::dfl_per_sample_losses(pred, mb, prov, cfg.train.dfl);
      const KlWorstCase wc = kl_worst_case(f, cfg.kl.epsilon, cfg.kl);
      std::fill(grad.begin(), grad.end(), 0.0);
      // weights are stop-gradient constants within the step
      predictor::dfl_loss(pred, mb, prov, cfg.train.dfl, &grad, wc.weights);
      if (!std::isfinite(wc.value)) throw TrainingError("kl-dro training diverged");
      nn::adam_step(pred.net().params(), grad, opt, cfg.train.lr);
      epoch_loss += wc.value;
      ++batches;
    }
    curve.push_back(epoch_loss / std::max(1, batches));
  }
  return curve;
}

WindowedSample perturb_sample(const Predictor& pred, const WindowedSample& sample,
                              const ProvisioningParams& prov, const WDroConfig& cfg, bool* skipped) {
  const double norm = pred.config().norm;
  const int w = static_cast<int>(sample.context.size());
  const int h = static_cast<int>(sample.label.size());
  std::vector<double> x0(w + h);  // normalized original
  for (int j = 0; j < w; ++j) x0[j] = sample.context[j] / norm;
  for (int j = 0; j < h; ++j) x0[w + j] = sample.label[j] / norm;
  std::vector<double> x = x0;
  if (skipped != nullptr) *skipped = false;

  WindowedSample cur = sample;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> dctx, dlab;
    try {
      predictor::input_gradient(pred, cur, prov, &dctx, &dlab);
    } catch (const std::exception&) {
      if (skipped != nullptr) *skipped = true;
      return sample;
    }
    bool finite = true;
    for (const double v : dctx) finite &= std::isfinite(v);
    for (const double v : dlab) finite &= std::isfinite(v);
    if (!finite) {
      if (skipped != nullptr) *skipped = true;
      return sample;
    }
    // ascend the loss, project onto the l2 ball, clamp non-negative
    for (int j = 0; j < w; ++j) x[j] += cfg.step_size * dctx[j];
    for (int j = 0; j < h; ++j) x[w + j] += cfg.step_size * dlab[j];
    double norm2 = 0.0;
    for (int j = 0; j < w + h; ++j) {
      const double d = x[j] - x0[j];
      norm2 += d * d;
    }
    const double dist = std::sqrt(norm2);
    if (dist > cfg.epsilon && dist > 0.0) {
      const double shrink = cfg.epsilon / dist;
      for (int j = 0; j < w + h; ++j) x[j] = x0[j] + shrink * (x[j] - x0[j]);
    }
    for (double& v : x) v = std::max(v, 0.0);
    for (int j = 0; j < w; ++j) cur.context[j] = x[j] * norm;
    for (int j = 0; j < h; ++j) cur.label[j] = x[w + j] * norm;
  }
  return cur;
}

WDroStats train_w_dro(Predictor& pred, std::span<const WindowedSample> s0, const ProvisioningParams& prov,
                      const BaselineTrainConfig& cfg, RandomStream& stream) {
  if (s0.empty()) throw std::invalid_argument("train_w_dro: empty dataset");
  const int n = static_cast<int>(s0.size());
  const int batch = std::max(1, std::min(cfg.train.batch, n));
  nn::AdamState opt;
  std::vector<double> grad(pred.net().params().size(), 0.0);
  RandomStream shuffle = stream.child("shuffle");
  WDroStats stats;

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      std::vector<WindowedSample> mb(count);
      std::vector<char> skip_flags(count, 0);
      parallel::for_range(count, [&](int64_t r) {
        bool skipped = false;
        mb[r] = perturb_sample(pred, s0[order[start + r]], prov, cfg.w, &skipped);
        skip_flags[r] = skipped ? 1 : 0;
      });
      for (const char flag : skip_flags) stats.skipped_samples += flag;
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = predictor::dfl_loss(pred, mb, prov, cfg.train.dfl, &grad);
      if (!std::isfinite(loss)) throw TrainingError("w-dro training diverged");
      nn::adam_step(pred.net().params(), grad, opt, cfg.train.lr);
      epoch_loss += loss;
      ++batches;
    }
    stats.epoch_losses.push_back(epoch_loss / std::max(1, batches));
  }
  return stats;
}

}  // namespace drdfl::baselines
