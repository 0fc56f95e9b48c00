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

#include "drdfl/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "drdfl/errors.hpp"
#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::diffusion {

DiffusionSchedule DiffusionSchedule::linear(int t_max, double beta_min, double beta_max) {
  if (t_max < 1) throw std::invalid_argument("schedule needs at least one step");
  DiffusionSchedule s;
  s.t_max = t_max;
  s.betas.resize(t_max);
  s.alphas.resize(t_max);
  s.alpha_bars.resize(t_max);
  s.sigma2.resize(t_max);
  double abar = 1.0;
  for (int t = 1; t <= t_max; ++t) {
    const double frac = t_max == 1 ? 0.0 : static_cast<double>(t - 1) / (t_max - 1);
    const double beta = beta_min + (beta_max - beta_min) * frac;
    const double abar_prev = abar;
    abar *= 1.0 - beta;
    s.betas[t - 1] = beta;
    s.alphas[t - 1] = 1.0 - beta;
    s.alpha_bars[t - 1] = abar;
    s.sigma2[t - 1] = t == 1 ? 0.0 : beta * (1.0 - abar_prev) / (1.0 - abar);
  }
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (t_max < 1 || static_cast<int>(betas.size()) != t_max || static_cast<int>(alpha_bars.size()) != t_max ||
      static_cast<int>(sigma2.size()) != t_max || static_cast<int>(alphas.size()) != t_max) {
    throw std::invalid_argument("schedule arrays must all have t_max entries");
  }
  for (int t = 1; t <= t_max; ++t) {
    if (!(betas[t - 1] > 0.0) || !(betas[t - 1] < 1.0)) {
      throw std::invalid_argument("betas must lie in (0, 1)");
    }
    if (t > 1 && betas[t - 1] < betas[t - 2]) throw std::invalid_argument("betas must be non-decreasing");
    if (t > 1 && !(alpha_bars[t - 1] < alpha_bars[t - 2])) {
      throw std::invalid_argument("alpha_bars must be strictly decreasing");
    }
    if (t > 1 && !(sigma2[t - 1] > 0.0)) {
      throw std::invalid_argument("posterior variances must be positive for t >= 2");
    }
  }
}

double DiffusionSchedule::post_mean_coef_x(int t) const { return 1.0 / std::sqrt(alphas[t - 1]); }

double DiffusionSchedule::post_mean_coef_eps(int t) const {
  return -betas[t - 1] / (std::sqrt(alphas[t - 1]) * std::sqrt(1.0 - alpha_bars[t - 1]));
}

DiffusionModel DiffusionModel::clone() const {
  DiffusionModel c;
  c.schedule = schedule;
  c.net = net->clone();
  c.head_net = head_net ? head_net->clone() : nullptr;
  c.tail_len = tail_len;
  c.tail_sigma2 = tail_sigma2;
  c.norm = norm;
  c.clamp_headroom = clamp_headroom;
  c.seed = seed;
  return c;
}

const nn::DenoiserNet& DiffusionModel::net_for_step(int t) const {
  if (head_net != nullptr && tail_len > 0 && t > tail_len) return *head_net;
  return *net;
}

double DiffusionModel::sigma2_for_step(int t) const {
  if (tail_len > 0 && t <= tail_len && tail_sigma2 > 0.0) return tail_sigma2;
  return schedule.sigma2[t - 1];
}

void ReverseTrajectory::validate(int seq_len) const {
  if (tail_len < 1 || states.size() != static_cast<size_t>(tail_len) + 1) {
    throw std::invalid_argument("trajectory must hold tail_len + 1 states");
  }
  for (const auto& s : states) {
    if (static_cast<int>(s.size()) != seq_len) throw std::invalid_argument("trajectory state length mismatch");
    for (const double v : s) {
      if (!std::isfinite(v)) throw std::invalid_argument("trajectory state must be finite");
    }
  }
}

std::vector<double> forward_sample(std::span<const double> x0, int t, std::span<const double> noise,
                                   const DiffusionSchedule& sched) {
  if (t < 1 || t > sched.t_max) throw std::out_of_range("forward_sample: step index out of range");
  if (x0.size() != noise.size()) throw std::invalid_argument("forward_sample: shape mismatch");
  const double a = std::sqrt(sched.alpha_bars[t - 1]);
  const double b = std::sqrt(1.0 - sched.alpha_bars[t - 1]);
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

double score_matching_loss(const DiffusionModel& m, const Matrix& batch_norm, RandomStream& stream,
                           std::vector<double>* grad) {
  if (batch_norm.rows == 0) throw std::invalid_argument("score_matching_loss: empty batch");
  const int n = batch_norm.rows;
  const int d = batch_norm.cols;
  if (d != m.seq_len()) throw std::invalid_argument("score_matching_loss: sequence length mismatch");
  const uint64_t base = const_cast<RandomStream&>(stream).next_u64();

  Matrix noised(n, d);
  Matrix eps(n, d);
  std::vector<int> steps(n);
  parallel::for_range(n, [&](int64_t i) {
    const double* row = batch_norm.row(static_cast<int>(i));
    const uint64_t content = hash_bytes(row, sizeof(double) * static_cast<size_t>(d));
    RandomStream sub(mix64(base, content));
    const int t = static_cast<int>(sub.uniform_int(1, m.schedule.t_max));
    steps[i] = t;
    const double a = std::sqrt(m.schedule.alpha_bars[t - 1]);
    const double b = std::sqrt(1.0 - m.schedule.alpha_bars[t - 1]);
    double* erow = eps.row(static_cast<int>(i));
    double* xrow = noised.row(static_cast<int>(i));
    for (int j = 0; j < d; ++j) {
      erow[j] = sub.normal();
      xrow[j] = a * row[j] + b * erow[j];
    }
  });

  std::unique_ptr<nn::DenoiserCache> cache;
  const Matrix pred = m.net->forward(noised, steps, m.schedule.t_max, grad != nullptr ? &cache : nullptr);

  std::vector<double> per_sample(n, 0.0);
  parallel::for_range(n, [&](int64_t i) {
    const double* erow = eps.row(static_cast<int>(i));
    const double* prow = pred.row(static_cast<int>(i));
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = erow[j] - prow[j];
      acc += diff * diff;
    }
    per_sample[i] = acc / d;
  });
  const double loss = kernels::reduce_sum(per_sample) / n;

  if (grad != nullptr) {
    Matrix dout(n, d);
    const double scale = 2.0 / (static_cast<double>(n) * d);
    for (int i = 0; i < n; ++i) {
      const double* erow = eps.row(i);
      const double* prow = pred.row(i);
      double* drow = dout.row(i);
      for (int j = 0; j < d; ++j) drow[j] = scale * (prow[j] - erow[j]);
    }
    m.net->backward(*cache, dout, grad);
  }
  return loss;
}

namespace {

// mu_theta for a batch of rows at per-row steps.
Matrix posterior_mean(const DiffusionModel& m, const Matrix& x, const std::vector<int>& t,
                      bool force_main_net = false) {
  Matrix mu(x.rows, x.cols);
  // Group rows by which network serves them (head vs tail).
  std::vector<int> main_rows, head_rows;
  for (int r = 0; r < x.rows; ++r) {
    const bool head = !force_main_net && m.head_net != nullptr && m.tail_len > 0 && t[r] > m.tail_len;
    (head ? head_rows : main_rows).push_back(r);
  }
  const auto run = [&](const nn::DenoiserNet& net, const std::vector<int>& rows) {
    if (rows.empty()) return;
    Matrix sub(static_cast<int>(rows.size()), x.cols);
    std::vector<int> st(rows.size());
    for (size_t k = 0; k < rows.size(); ++k) {
      std::copy(x.row(rows[k]), x.row(rows[k]) + x.cols, sub.row(static_cast<int>(k)));
      st[k] = t[rows[k]];
    }
    const Matrix eps = net.forward(sub, st, m.schedule.t_max);
    for (size_t k = 0; k < rows.size(); ++k) {
      const int r = rows[k];
      const double cx = m.schedule.post_mean_coef_x(t[r]);
      const double ce = m.schedule.post_mean_coef_eps(t[r]);
      const double* xr = x.row(r);
      const double* er = eps.row(static_cast<int>(k));
      double* mr = mu.row(r);
      for (int j = 0; j < x.cols; ++j) mr[j] = cx * xr[j] + ce * er[j];
    }
  };
  run(*m.net, main_rows);
  if (m.head_net != nullptr) run(*m.head_net, head_rows);
  return mu;
}

}  // namespace

std::vector<double> reverse_step(const DiffusionModel& m, std::span<const double> x_t, int t,
                                 std::span<const double> noise) {
  if (t < 1 || t > m.schedule.t_max) throw std::out_of_range("reverse_step: step index out of range");
  if (static_cast<int>(x_t.size()) != m.seq_len()) throw std::invalid_argument("reverse_step: shape mismatch");
  Matrix x(1, static_cast<int>(x_t.size()));
  std::copy(x_t.begin(), x_t.end(), x.data.begin());
  const Matrix mu = posterior_mean(m, x, {t});
  std::vector<double> out(x_t.size());
  const double sigma = t == 1 ? 0.0 : std::sqrt(m.sigma2_for_step(t));
  for (size_t j = 0; j < out.size(); ++j) {
    out[j] = mu.at(0, static_cast<int>(j)) + (t == 1 ? 0.0 : sigma * noise[j]);
  }
  return out;
}

SampleResult sample(const DiffusionModel& m, int count, RandomStream& stream, SampleOptions opts) {
  if (count < 1) throw std::invalid_argument("sample: count must be at least 1");
  const int d = m.seq_len();
  const int t_max = m.schedule.t_max;
  if (opts.tail_record < 0 || opts.tail_record > t_max) {
    throw std::invalid_argument("sample: tail_record out of range");
  }

  // Per-sample streams so draws are independent of batching; the chains share
  // lockstep t so the network runs once per step over the whole batch.
  std::vector<RandomStream> streams;
  streams.reserve(count);
  for (int i = 0; i < count; ++i) streams.push_back(stream.child("sample", static_cast<uint64_t>(i)));

  Matrix x(count, d);
  parallel::for_range(count, [&](int64_t i) {
    double* row = x.row(static_cast<int>(i));
    for (int j = 0; j < d; ++j) row[j] = streams[i].normal();
  });

  SampleResult result;
  if (opts.tail_record > 0) {
    result.trajectories.assign(count, ReverseTrajectory{});
    for (auto& tr : result.trajectories) tr.tail_len = opts.tail_record;
  }
  const auto record_state = [&](int t_now) {
    if (opts.tail_record == 0 || t_now > opts.tail_record) return;
    for (int i = 0; i < count; ++i) {
      result.trajectories[i].states.emplace_back(x.row(i), x.row(i) + d);
    }
  };
  record_state(t_max);  // covers tail_record == t_max

  for (int t = t_max; t >= 1; --t) {
    if (t != t_max) record_state(t);
    const std::vector<int> steps(count, t);
    const Matrix mu = posterior_mean(m, x, steps);
    const double sigma = t == 1 ? 0.0 : std::sqrt(m.sigma2_for_step(t));
    parallel::for_range(count, [&](int64_t i) {
      const double* mrow = mu.row(static_cast<int>(i));
      double* row = x.row(static_cast<int>(i));
      for (int j = 0; j < d; ++j) {
        row[j] = t == 1 ? mrow[j] : mrow[j] + sigma * streams[i].normal();
      }
    });
  }
  record_state(0);

  result.tokens = Matrix(count, d);
  const double hi = m.norm * m.clamp_headroom;
  for (int i = 0; i < count; ++i) {
    const double* src = x.row(i);
    double* dst = result.tokens.row(i);
    for (int j = 0; j < d; ++j) dst[j] = std::clamp(src[j] * m.norm, 0.0, hi);
  }
  return result;
}

namespace {

struct TailBatch {
  Matrix x;                 // x_t rows
  Matrix target;            // x_{t-1} rows
  std::vector<int> steps;   // per row t
  std::vector<double> inv_sigma2;
};

TailBatch build_tail_batch(const DiffusionModel& m, const ReverseTrajectory& traj) {
  traj.validate(m.seq_len());
  const int tp = traj.tail_len;
  const int d = m.seq_len();
  TailBatch b;
  b.x = Matrix(tp, d);
  b.target = Matrix(tp, d);
  b.steps.resize(tp);
  b.inv_sigma2.resize(tp);
  for (int t = tp; t >= 1; --t) {
    const int row = tp - t;
    const auto& xt = traj.state_at(t);
    const auto& xprev = traj.state_at(t - 1);
    std::copy(xt.begin(), xt.end(), b.x.row(row));
    std::copy(xprev.begin(), xprev.end(), b.target.row(row));
    b.steps[row] = t;
    const double s2 = m.sigma2_for_step(t);
    if (!(s2 > 0.0)) throw ConfigError("log_prob_tail: zero sampling variance in the tail");
    b.inv_sigma2[row] = 1.0 / s2;
  }
  return b;
}

}  // namespace

double log_prob_tail(const DiffusionModel& m, const ReverseTrajectory& traj) {
  TailBatch b = build_tail_batch(m, traj);
  const Matrix mu = posterior_mean(m, b.x, b.steps, /*force_main_net=*/true);
  double logp = 0.0;
  for (int r = 0; r < b.x.rows; ++r) {
    const double* trow = b.target.row(r);
    const double* mrow = mu.row(r);
    double sq = 0.0;
    for (int j = 0; j < b.x.cols; ++j) {
      const double diff = trow[j] - mrow[j];
      sq += diff * diff;
    }
    logp -= 0.5 * b.inv_sigma2[r] * sq;
  }
  return logp;
}

double log_prob_tail_grad(const DiffusionModel& m, const ReverseTrajectory& traj, double scale,
                          std::vector<double>* grad) {
  TailBatch b = build_tail_batch(m, traj);
  std::unique_ptr<nn::DenoiserCache> cache;
  const Matrix eps = m.net->forward(b.x, b.steps, m.schedule.t_max, &cache);
  Matrix dout(b.x.rows, b.x.cols);
  double logp = 0.0;
  for (int r = 0; r < b.x.rows; ++r) {
    const int t = b.steps[r];
    const double cx = m.schedule.post_mean_coef_x(t);
    const double ce = m.schedule.post_mean_coef_eps(t);
    const double* xrow = b.x.row(r);
    const double* erow = eps.row(r);
    const double* trow = b.target.row(r);
    double* drow = dout.row(r);
    double sq = 0.0;
    for (int j = 0; j < b.x.cols; ++j) {
      const double mu = cx * xrow[j] + ce * erow[j];
      const double diff = trow[j] - mu;
      sq += diff * diff;
      // d logp / d eps_hat = (x_{t-1} - mu) / sigma^2 * ce
      drow[j] = scale * b.inv_sigma2[r] * diff * ce;
    }
    logp -= 0.5 * b.inv_sigma2[r] * sq;
  }
  if (grad != nullptr) m.net->backward(*cache, dout, grad);
  return logp;
}

Matrix normalize_dataset(const data::TraceDataset& d) {
  Matrix m(static_cast<int>(d.size()), d.length);
  for (size_t i = 0; i < d.size(); ++i) {
    for (int j = 0; j < d.length; ++j) m.at(static_cast<int>(i), j) = d.sequences[i][j] / d.norm;
  }
  return m;
}

DiffusionTrainResult train_reference(const data::TraceDataset& dataset, const DiffusionTrainConfig& cfg,
                                     RandomStream& stream) {
  dataset.validate();
  if (dataset.size() == 0) throw std::invalid_argument("train_reference: empty dataset");

  DiffusionTrainResult out;
  DiffusionModel& model = out.model;
  model.schedule = DiffusionSchedule::linear(cfg.t_max, cfg.beta_min, cfg.beta_max);
  model.net = nn::make_denoiser(dataset.length, cfg.arch, cfg.init_seed);
  model.norm = dataset.norm;
  model.seed = stream.seed();

  const Matrix all = normalize_dataset(dataset);
  const int n = all.rows;
  const int batch = std::max(1, std::min(cfg.batch, n));

  nn::AdamState opt;
  std::vector<double> grad(model.net->params().size(), 0.0);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> last_finite = model.net->params();

  RandomStream shuffle_stream = stream.child("shuffle");
  RandomStream loss_stream = stream.child("loss");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double frac = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
    const double lr = cfg.lr_final > 0.0 ? cfg.lr + (cfg.lr_final - cfg.lr) * frac : cfg.lr;
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle_stream.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      Matrix mb(count, all.cols);
      for (int r = 0; r < count; ++r) {
        std::copy(all.row(static_cast<int>(order[start + r])),
                  all.row(static_cast<int>(order[start + r])) + all.cols, mb.row(r));
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = score_matching_loss(model, mb, loss_stream, &grad);
      if (!std::isfinite(loss)) {
        model.net->params() = last_finite;
        std::string where;
        if (!cfg.checkpoint_dir.empty()) {
          where = cfg.checkpoint_dir + "/diffusion_last_finite.json";
          save_checkpoint(model, where);
        }
        throw TrainingError("diffusion training diverged at epoch " + std::to_string(epoch) +
                            (where.empty() ? "" : "; last finite checkpoint at " + where));
      }
      nn::adam_step(model.net->params(), grad, opt, lr);
      epoch_loss += loss;
      ++batches;
    }
    out.epoch_losses.push_back(epoch_loss / std::max(1, batches));
    last_finite = model.net->params();
  }
  return out;
}

namespace {

nlohmann::json schedule_to_json(const DiffusionSchedule& s) {
  return {{"t_max", s.t_max},
          {"betas", s.betas},
          {"alphas", s.alphas},
          {"alpha_bars", s.alpha_bars},
          {"sigma2", s.sigma2}};
}

DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
  DiffusionSchedule s;
  s.t_max = j.at("t_max").get<int>();
  s.betas = j.at("betas").get<std::vector<double>>();
  s.alphas = j.at("alphas").get<std::vector<double>>();
  s.alpha_bars = j.at("alpha_bars").get<std::vector<double>>();
  s.sigma2 = j.at("sigma2").get<std::vector<double>>();
  s.validate();
  return s;
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const DiffusionModel& m, const std::string& path) {
  nlohmann::json j;
  j["magic"] = kCheckpointMagic;
  j["schedule"] = schedule_to_json(m.schedule);
  j["arch"] = m.net->arch_json();
  j["seq_len"] = m.seq_len();
  j["params"] = m.net->params();
  if (m.head_net != nullptr) {
    j["head_arch"] = m.head_net->arch_json();
    j["head_params"] = m.head_net->params();
  }
  j["tail_len"] = m.tail_len;
  j["tail_sigma2"] = m.tail_sigma2;
  j["norm"] = m.norm;
  j["clamp_headroom"] = m.clamp_headroom;
  j["seed"] = m.seed;
  atomic_write(path, j.dump());
}

DiffusionModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("magic", "") != kCheckpointMagic) {
    throw std::runtime_error("not a " + std::string(kCheckpointMagic) + " checkpoint: " + path);
  }
  DiffusionModel m;
  m.schedule = schedule_from_json(j.at("schedule"));
  const int seq_len = j.at("seq_len").get<int>();
  m.net = nn::make_denoiser(seq_len, j.at("arch"), /*init_seed=*/0);
  m.net->params() = j.at("params").get<std::vector<double>>();
  if (j.contains("head_params")) {
    m.head_net = nn::make_denoiser(seq_len, j.at("head_arch"), 0);
    m.head_net->params() = j.at("head_params").get<std::vector<double>>();
  }
  m.tail_len = j.value("tail_len", 0);
  m.tail_sigma2 = j.value("tail_sigma2", 0.0);
  m.norm = j.at("norm").get<double>();
  m.clamp_headroom = j.value("clamp_headroom", data::kClampHeadroom);
  m.seed = j.value("seed", uint64_t{0});
  return m;
}

}  // namespace drdfl::diffusion
