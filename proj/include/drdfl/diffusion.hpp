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

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drdfl/data.hpp"
#include "drdfl/matrix.hpp"
#include "drdfl/nn.hpp"
#include "drdfl/random.hpp"

namespace drdfl::diffusion {

constexpr const char* kCheckpointMagic = "DRDFL-DIFF-v1";

// Discrete variance-preserving noising schedule. Index t-1 holds the values
// for (1-based) step t; sigma2 is the standard posterior variance
// beta_t * (1 - abar_{t-1}) / (1 - abar_t), zero at t = 1.
struct DiffusionSchedule {
  int t_max = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> sigma2;

  static DiffusionSchedule linear(int t_max, double beta_min = 1e-4, double beta_max = 0.02);
  void validate() const;

  double beta(int t) const { return betas[t - 1]; }
  double alpha(int t) const { return alphas[t - 1]; }
  double alpha_bar(int t) const { return alpha_bars[t - 1]; }
  // Posterior mean is coef_x(t) * x_t + coef_eps(t) * eps_hat.
  double post_mean_coef_x(int t) const;
  double post_mean_coef_eps(int t) const;
};

// Diffusion model over normalized workload sequences. When tail_len > 0 the
// model is a fine-tuned tail: reverse steps t > tail_len run the frozen
// reference network (head_net) and steps t <= tail_len run `net`; sampling
// variance in the tail is the constant tail_sigma2. A plain reference model
// has tail_len = 0 and no head_net.
struct DiffusionModel {
  DiffusionSchedule schedule;
  std::unique_ptr<nn::DenoiserNet> net;
  std::unique_ptr<nn::DenoiserNet> head_net;
  int tail_len = 0;
  double tail_sigma2 = 0.0;
  double norm = 4e5;
  double clamp_headroom = data::kClampHeadroom;
  uint64_t seed = 0;

  DiffusionModel clone() const;
  const nn::DenoiserNet& net_for_step(int t) const;
  double sigma2_for_step(int t) const;
  int seq_len() const { return net->seq_len(); }
};

// Stored tail of a reverse rollout: states x_{T'}, ..., x_0 in normalized
// sequence space.
struct ReverseTrajectory {
  std::vector<std::vector<double>> states;
  int tail_len = 0;

  const std::vector<double>& state_at(int t) const { return states[static_cast<size_t>(tail_len - t)]; }
  void validate(int seq_len) const;
};

struct SampleResult {
  Matrix tokens;  // de-normalized, clamped to [0, norm * headroom]
  std::vector<ReverseTrajectory> trajectories;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
std::vector<double> forward_sample(std::span<const double> x0, int t, std::span<const double> noise,
                                   const DiffusionSchedule& sched);

// Denoising score-matching loss in eps-prediction form: mean over the batch
// of ||eps - eps_theta(x_t, t)||^2 / d with per-sample uniform t. Each sample
// draws its (t, eps) from a sub-stream keyed on the call's base draw and the
// sample's content, so the value is invariant to batch order and batch
// duplication under the same stream state. Accumulates d(loss)/d(params)
// into grad when given.
double score_matching_loss(const DiffusionModel& m, const Matrix& batch_norm, RandomStream& stream,
                           std::vector<double>* grad = nullptr);

// One ancestral reverse step x_{t-1} = mu_theta(x_t, t) + sigma_t * noise;
// the noise term is dropped at t = 1.
std::vector<double> reverse_step(const DiffusionModel& m, std::span<const double> x_t, int t,
                                 std::span<const double> noise);

struct SampleOptions {
  int tail_record = 0;  // store the last tail_record+1 states per sample when > 0
};

// Draws count sequences by running the reverse chain from x_T ~ N(0, I).
// Sample i consumes stream.child("sample", i), so results are independent of
// batch composition and thread count.
SampleResult sample(const DiffusionModel& m, int count, RandomStream& stream, SampleOptions opts = {});

// Theta-dependent part of ln P_theta(x_{0:T'}):
// -sum_{t=1}^{T'} ||x_{t-1} - mu_theta(x_t, t)||^2 / (2 sigma_t^2).
double log_prob_tail(const DiffusionModel& m, const ReverseTrajectory& traj);

// Accumulates scale * d(log_prob_tail)/d(params) into grad; returns the
// log-prob value.
double log_prob_tail_grad(const DiffusionModel& m, const ReverseTrajectory& traj, double scale,
                          std::vector<double>* grad);

struct DiffusionTrainConfig {
  int t_max = 500;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  nlohmann::json arch = {{"kind", "unet"}, {"levels", 4}, {"base_channels", 128}, {"temb_dim", 32}};
  int epochs = 20;
  int batch = 64;
  double lr = 1e-3;  // reference-model training rate; the fine-tuning rate lives in the PPO config
  double lr_final = 0.0;  // when > 0, the rate decays linearly to this value over the run
  uint64_t init_seed = 1;
  std::string checkpoint_dir;  // when set, the last finite state is saved on divergence
};

struct DiffusionTrainResult {
  DiffusionModel model;
  std::vector<double> epoch_losses;
};

// Trains the reference model theta_0 by Adam on the score-matching loss.
// Throws TrainingError on divergence after writing the last finite
// checkpoint when a checkpoint_dir is configured.
DiffusionTrainResult train_reference(const data::TraceDataset& dataset, const DiffusionTrainConfig& cfg,
                                     RandomStream& stream);

// Rows of dataset sequences divided by the normalization constant.
Matrix normalize_dataset(const data::TraceDataset& d);

void save_checkpoint(const DiffusionModel& m, const std::string& path);
DiffusionModel load_checkpoint(const std::string& path);

}  // namespace drdfl::diffusion
