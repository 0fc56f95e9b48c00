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

#include "drdfl/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "drdfl/errors.hpp"
#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::predictor {

using provisioning::ProvisioningParams;

WindowedSample slice_sample(std::span<const double> sequence, int context) {
  if (context < 1) throw std::invalid_argument("slice_sample: context window must be at least 1");
  if (static_cast<int>(sequence.size()) <= context) {
    throw std::invalid_argument("slice_sample: sequence must be longer than the context window");
  }
  WindowedSample s;
  s.context.assign(sequence.begin(), sequence.begin() + context);
  s.label.assign(sequence.begin() + context, sequence.end());
  return s;
}

std::vector<WindowedSample> windows_of(const data::TraceDataset& d) {
  std::vector<WindowedSample> out;
  out.reserve(d.size());
  for (const auto& seq : d.sequences) out.push_back(slice_sample(seq, d.context));
  return out;
}

Predictor::Predictor(const PredictorConfig& cfg) : cfg_(cfg), net_(cfg.hidden, cfg.init_seed) {
  if (cfg.context < 1 || cfg.horizon < 1) throw std::invalid_argument("predictor needs W >= 1 and N >= 1");
  if (!(cfg.norm > 0.0)) throw std::invalid_argument("predictor norm must be positive");
}

std::vector<double> Predictor::predict(std::span<const double> context) const {
  if (static_cast<int>(context.size()) != cfg_.context) {
    throw std::invalid_argument("predict: context length mismatch");
  }
  Matrix m(1, cfg_.context);
  for (int j = 0; j < cfg_.context; ++j) m.at(0, j) = context[j] / cfg_.norm;
  const Matrix out = net_.predict(m, cfg_.horizon);
  std::vector<double> tokens(cfg_.horizon);
  for (int j = 0; j < cfg_.horizon; ++j) tokens[j] = out.at(0, j) * cfg_.norm;
  return tokens;
}

Matrix Predictor::predict_batch(const Matrix& context_tokens) const {
  if (context_tokens.cols != cfg_.context) throw std::invalid_argument("predict_batch: context length mismatch");
  Matrix norm(context_tokens.rows, context_tokens.cols);
  for (size_t i = 0; i < norm.size(); ++i) norm.data[i] = context_tokens.data[i] / cfg_.norm;
  Matrix out = net_.predict(norm, cfg_.horizon);
  for (double& v : out.data) v *= cfg_.norm;
  return out;
}

namespace {

double softplus(double u, double tau) {
  const double r = u / tau;
  if (r > 30.0) return u;
  if (r < -30.0) return 0.0;
  return tau * std::log1p(std::exp(r));
}

double sigmoid_stable(double r) {
  if (r > 30.0) return 1.0;
  if (r < -30.0) return 0.0;
  return 1.0 / (1.0 + std::exp(-r));
}

// Decision map in token space plus its derivative w.r.t. the prediction.
struct DecisionMap {
  double slope = 1.0;
  double lo = 0.0, hi = 0.0;
  bool smooth = false;
  double tau = 0.0;

  DecisionMap(const ProvisioningParams& p, const DflOptions& opts) {
    slope = std::max(provisioning::decision_slope(p), 0.0);
    lo = p.a_min;
    hi = p.a_max;
    smooth = opts.smooth_clip;
    tau = opts.temp_frac * p.a_max;
  }

  double capacity(double c_hat) const {
    const double z = slope * c_hat;
    if (!smooth) return std::clamp(z, lo, hi);
    return lo + softplus(z - lo, tau) - softplus(z - hi, tau);
  }

  double derivative(double c_hat) const {
    const double z = slope * c_hat;
    if (!smooth) return (z > lo && z < hi) ? slope : 0.0;
    return slope * (sigmoid_stable((z - lo) / tau) - sigmoid_stable((z - hi) / tau));
  }
};

Matrix batch_context(std::span<const WindowedSample> batch, int context, double norm) {
  Matrix m(static_cast<int>(batch.size()), context);
  for (size_t i = 0; i < batch.size(); ++i) {
    if (static_cast<int>(batch[i].context.size()) != context) {
      throw std::invalid_argument("batch sample has wrong context length");
    }
    for (int j = 0; j < context; ++j) m.at(static_cast<int>(i), j) = batch[i].context[j] / norm;
  }
  return m;
}

// Per-slot decision loss and d(loss)/d(c_hat) for one sample.
void slot_loss_grad(const DecisionMap& map, const ProvisioningParams& prov, const DflOptions& opts,
                    double norm, double c_hat, double c_true, double* loss, double* dloss_dchat) {
  const double a = map.capacity(c_hat);
  *loss = -(provisioning::utility(a, c_true, prov) - prov.gamma * provisioning::cost(a, c_true, prov));
  if (dloss_dchat == nullptr) return;
  if (opts.zero_order) {
    const double delta = opts.zo_step * norm;
    const double up = std::max(0.0, c_hat + delta);
    const double dn = std::max(0.0, c_hat - delta);
    const double au = map.capacity(up);
    const double ad = map.capacity(dn);
    const double lu = -(provisioning::utility(au, c_true, prov) - prov.gamma * provisioning::cost(au, c_true, prov));
    const double ld = -(provisioning::utility(ad, c_true, prov) - prov.gamma * provisioning::cost(ad, c_true, prov));
    *dloss_dchat = (lu - ld) / (up - dn);
  } else {
    *dloss_dchat = -provisioning::slot_reward_da(a, c_true, prov) * map.derivative(c_hat);
  }
}

}  // namespace

double dfl_loss(const Predictor& pred, std::span<const WindowedSample> batch, const ProvisioningParams& prov,
                const DflOptions& opts, std::vector<double>* grad, std::span<const double> sample_weights) {
  if (batch.empty()) throw std::invalid_argument("dfl_loss: empty batch");
  if (!sample_weights.empty() && sample_weights.size() != batch.size()) {
    throw std::invalid_argument("dfl_loss: one weight per sample required");
  }
  const auto& cfg = pred.config();
  const int n = static_cast<int>(batch.size());
  const int horizon = cfg.horizon;
  const Matrix context_norm = batch_context(batch, cfg.context, cfg.norm);
  Matrix preds_norm = pred.net().predict(context_norm, horizon);

  for (const auto& s : batch) {
    if (static_cast<int>(s.label.size()) != horizon) {
      throw std::invalid_argument("batch sample has wrong label length");
    }
  }
  const DecisionMap map(prov, opts);
  std::vector<double> per_sample(n, 0.0);
  Matrix dpred(grad != nullptr ? n : 0, grad != nullptr ? horizon : 0);
  parallel::for_range(n, [&](int64_t i) {
    const auto& label = batch[i].label;
    const double w = sample_weights.empty() ? 1.0 / n : sample_weights[i];
    double f = 0.0;
    for (int j = 0; j < horizon; ++j) {
      const double c_hat = preds_norm.at(static_cast<int>(i), j) * cfg.norm;
      double loss = 0.0, dl = 0.0;
      slot_loss_grad(map, prov, opts, cfg.norm, c_hat, label[j], &loss, grad != nullptr ? &dl : nullptr);
      f += loss;
      if (grad != nullptr) {
        // d(weighted loss)/d(pred_norm) = w * dl/dchat * norm
        dpred.at(static_cast<int>(i), j) = w * dl * cfg.norm;
      }
    }
    per_sample[i] = w * f;
  });
  const double total = kernels::reduce_sum(per_sample);
  if (grad != nullptr) pred.net().predict_backward(context_norm, horizon, dpred, grad);
  return total;
}

std::vector<double> dfl_per_sample_losses(const Predictor& pred, std::span<const WindowedSample> batch,
                                          const ProvisioningParams& prov, const DflOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("dfl_per_sample_losses: empty batch");
  const auto& cfg = pred.config();
  const int n = static_cast<int>(batch.size());
  for (const auto& s : batch) {
    if (static_cast<int>(s.label.size()) != cfg.horizon) {
      throw std::invalid_argument("batch sample has wrong label length");
    }
  }
  const Matrix context_norm = batch_context(batch, cfg.context, cfg.norm);
  const Matrix preds_norm = pred.net().predict(context_norm, cfg.horizon);
  const DecisionMap map(prov, opts);
  std::vector<double> out(n, 0.0);
  parallel::for_range(n, [&](int64_t i) {
    double f = 0.0;
    for (int j = 0; j < cfg.horizon; ++j) {
      const double c_hat = preds_norm.at(static_cast<int>(i), j) * cfg.norm;
      double loss = 0.0;
      slot_loss_grad(map, prov, opts, cfg.norm, c_hat, batch[i].label[j], &loss, nullptr);
      f += loss;
    }
    out[i] = f;
  });
  return out;
}

double mse_loss(const Predictor& pred, std::span<const WindowedSample> batch, std::vector<double>* grad) {
  if (batch.empty()) throw std::invalid_argument("mse_loss: empty batch");
  const auto& cfg = pred.config();
  const int n = static_cast<int>(batch.size());
  const int horizon = cfg.horizon;
  const Matrix context_norm = batch_context(batch, cfg.context, cfg.norm);
  const Matrix preds_norm = pred.net().predict(context_norm, horizon);
  double total = 0.0;
  Matrix dpred(grad != nullptr ? n : 0, grad != nullptr ? horizon : 0);
  const double denom = static_cast<double>(n) * horizon;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < horizon; ++j) {
      const double e = preds_norm.at(i, j) - batch[i].label[j] / cfg.norm;
      total += e * e / denom;
      if (grad != nullptr) dpred.at(i, j) = 2.0 * e / denom;
    }
  }
  if (grad != nullptr) pred.net().predict_backward(context_norm, horizon, dpred, grad);
  return total;
}

void input_gradient(const Predictor& pred, const WindowedSample& sample, const ProvisioningParams& prov,
                    std::vector<double>* dcontext_norm, std::vector<double>* dlabel_norm) {
  const auto& cfg = pred.config();
  const WindowedSample* b = &sample;
  const Matrix context_norm = batch_context({b, 1}, cfg.context, cfg.norm);
  const Matrix preds_norm = pred.net().predict(context_norm, cfg.horizon);
  const DflOptions opts;  // hard decision map
  const DecisionMap map(prov, opts);

  Matrix dpred(1, cfg.horizon);
  dlabel_norm->assign(cfg.horizon, 0.0);
  for (int j = 0; j < cfg.horizon; ++j) {
    const double c_hat = preds_norm.at(0, j) * cfg.norm;
    const double a = map.capacity(c_hat);
    const double c = sample.label[j];
    dpred.at(0, j) = -provisioning::slot_reward_da(a, c, prov) * map.derivative(c_hat) * cfg.norm;
    (*dlabel_norm)[j] = -provisioning::slot_reward_dc(a, c, prov) * cfg.norm;
  }
  Matrix dctx;
  pred.net().predict_backward(context_norm, cfg.horizon, dpred, nullptr, &dctx);
  dcontext_norm->assign(cfg.context, 0.0);
  for (int j = 0; j < cfg.context; ++j) (*dcontext_norm)[j] = dctx.at(0, j);
}

Objective objective_from_string(const std::string& name) {
  if (name == "dfl") return Objective::kDfl;
  if (name == "mse") return Objective::kMse;
  throw std::invalid_argument("unknown objective: " + name);
}

namespace {

double run_batches(Predictor& pred, std::span<const WindowedSample> dataset, const ProvisioningParams& prov,
                   const TrainConfig& cfg, nn::AdamState& opt, RandomStream& shuffle_stream) {
  const int n = static_cast<int>(dataset.size());
  const int batch = std::max(1, std::min(cfg.batch, n));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1],
              order[static_cast<size_t>(shuffle_stream.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  }
  std::vector<double> grad(pred.net().params().size(), 0.0);
  double epoch_loss = 0.0;
  int batches = 0;
  for (int start = 0; start < n; start += batch) {
    const int count = std::min(batch, n - start);
    std::vector<WindowedSample> mb(count);
    for (int r = 0; r < count; ++r) mb[r] = dataset[order[start + r]];
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = cfg.objective == Objective::kDfl
                            ? dfl_loss(pred, mb, prov, cfg.dfl, &grad)
                            : mse_loss(pred, mb, &grad);
    if (!std::isfinite(loss)) {
      throw TrainingError("predictor training diverged (non-finite loss)");
    }
    nn::adam_step(pred.net().params(), grad, opt, cfg.lr);
    epoch_loss += loss;
    ++batches;
  }
  return epoch_loss / std::max(1, batches);
}

}  // namespace

std::vector<double> train(Predictor& pred, std::span<const WindowedSample> dataset,
                          const ProvisioningParams& prov, const TrainConfig& cfg, RandomStream& stream) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  nn::AdamState opt;
  std::vector<double> curve;
  std::vector<double> last_finite = pred.net().params();
  RandomStream shuffle = stream.child("shuffle");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    try {
      curve.push_back(run_batches(pred, dataset, prov, cfg, opt, shuffle));
    } catch (const TrainingError&) {
      pred.net().params() = last_finite;
      throw;
    }
    last_finite = pred.net().params();
  }
  return curve;
}

double train_one_pass(Predictor& pred, std::span<const WindowedSample> dataset, const ProvisioningParams& prov,
                      const TrainConfig& cfg, nn::AdamState& opt, RandomStream& stream) {
  if (dataset.empty()) throw std::invalid_argument("train_one_pass: empty dataset");
  RandomStream shuffle = stream.child("shuffle");
  return run_batches(pred, dataset, prov, cfg, opt, shuffle);
}

void save_checkpoint(const Predictor& pred, const std::string& path) {
  nlohmann::json j;
  j["magic"] = kCheckpointMagic;
  j["arch"] = pred.net().arch_json();
  j["params"] = pred.net().params();
  j["context"] = pred.config().context;
  j["horizon"] = pred.config().horizon;
  j["norm"] = pred.config().norm;
  j["seed"] = pred.config().init_seed;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump();
  }
  std::filesystem::rename(tmp, path);
}

Predictor load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("magic", "") != kCheckpointMagic) {
    throw std::runtime_error("not a " + std::string(kCheckpointMagic) + " checkpoint: " + path);
  }
  PredictorConfig cfg;
  cfg.hidden = j.at("arch").at("hidden").get<std::vector<int>>();
  cfg.context = j.at("context").get<int>();
  cfg.horizon = j.at("horizon").get<int>();
  cfg.norm = j.at("norm").get<double>();
  cfg.init_seed = j.value("seed", uint64_t{1});
  Predictor pred(cfg);
  pred.net().params() = j.at("params").get<std::vector<double>>();
  return pred;
}

}  // namespace drdfl::predictor
