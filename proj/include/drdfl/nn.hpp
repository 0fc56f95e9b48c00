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
#include <string>
#include <vector>

#include <json.hpp>

#include "drdfl/matrix.hpp"
#include "drdfl/random.hpp"

namespace drdfl::nn {

// ---- optimizer --------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void reset(size_t n);
};

// In-place ascent/descent step: params += sign * lr * m_hat / (sqrt(v_hat) + eps).
// sign = -1 minimizes, +1 maximizes.
void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& st, double lr,
               double sign = -1.0);

// ---- pieces -----------------------------------------------------------------

double silu(double x);
double silu_grad(double x);

// Standard sinusoidal embedding of a (1-based) step index.
void sinusoidal_embedding(double t, int dim, double* out);

// Dense layer over flat parameter storage; weight is [in x out] row-major at
// offset w, bias [out] at offset b.
struct Linear {
  int in = 0;
  int out = 0;
  size_t w = 0;
  size_t b = 0;

  Linear() = default;
  Linear(size_t* cursor, int in_dim, int out_dim);
  void init(std::vector<double>& params, RandomStream& s) const;
  // y[n x out] = x[n x in] * W + b
  void forward(const double* params, const Matrix& x, Matrix* y) const;
  // Accumulates into grad; dx (optional) receives dLoss/dx.
  void backward(const double* params, const Matrix& x, const Matrix& dy, std::vector<double>* grad,
                Matrix* dx) const;
};

// ---- noise-prediction networks ----------------------------------------------

// Opaque forward cache handed back to backward() to avoid recomputing
// activations.
struct DenoiserCache {
  virtual ~DenoiserCache() = default;
};

// Noise-prediction network eps_theta(x_t, t) over length-L sequences.
// Implementations are stateless apart from the flat parameter vector, so
// const forward/backward calls are safe to run concurrently.
class DenoiserNet {
 public:
  virtual ~DenoiserNet() = default;
  virtual int seq_len() const = 0;
  virtual std::vector<double>& params() = 0;
  virtual const std::vector<double>& params() const = 0;
  // x [n x L], one (1-based) step index per row; t_max scales nothing here but
  // is part of the call contract so embeddings could depend on it.
  virtual Matrix forward(const Matrix& x, const std::vector<int>& t, int t_max,
                         std::unique_ptr<DenoiserCache>* cache = nullptr) const = 0;
  // Accumulates dLoss/dparams into grad given the upstream gradient on the
  // network output and the cache produced by forward() on the same inputs.
  virtual void backward(const DenoiserCache& cache, const Matrix& grad_out,
                        std::vector<double>* grad) const = 0;
  virtual nlohmann::json arch_json() const = 0;
  virtual std::unique_ptr<DenoiserNet> clone() const = 0;
};

// Fully connected residual fallback: Linear(L+E -> H), one residual hidden
// block, Linear(H -> L).
class MlpDenoiser : public DenoiserNet {
 public:
  MlpDenoiser(int seq_len, int hidden, int temb_dim, uint64_t init_seed);
  int seq_len() const override { return seq_len_; }
  std::vector<double>& params() override { return params_; }
  const std::vector<double>& params() const override { return params_; }
  Matrix forward(const Matrix& x, const std::vector<int>& t, int t_max,
                 std::unique_ptr<DenoiserCache>* cache = nullptr) const override;
  void backward(const DenoiserCache& cache, const Matrix& grad_out,
                std::vector<double>* grad) const override;
  nlohmann::json arch_json() const override;
  std::unique_ptr<DenoiserNet> clone() const override;

 private:
  int seq_len_;
  int hidden_;
  int temb_dim_;
  Linear fc_in_, fc_mid_, fc_out_;
  std::vector<double> params_;
};

// 1-D U-Net: `levels` resolutions, base_channels at the first level and
// 2*base_channels below, stride-2 downsampling convs, nearest upsampling with
// skip concatenation, per-level time-embedding projections.
class UnetDenoiser : public DenoiserNet {
 public:
  UnetDenoiser(int seq_len, int levels, int base_channels, int temb_dim, uint64_t init_seed);
  int seq_len() const override { return seq_len_; }
  std::vector<double>& params() override { return params_; }
  const std::vector<double>& params() const override { return params_; }
  Matrix forward(const Matrix& x, const std::vector<int>& t, int t_max,
                 std::unique_ptr<DenoiserCache>* cache = nullptr) const override;
  void backward(const DenoiserCache& cache, const Matrix& grad_out,
                std::vector<double>* grad) const override;
  nlohmann::json arch_json() const override;
  std::unique_ptr<DenoiserNet> clone() const override;

 private:
  struct Conv {
    int cin = 0, cout = 0, ksize = 3, stride = 1, pad = 1;
    size_t w = 0, b = 0;
  };
  Conv make_conv(size_t* cursor, int cin, int cout, int ksize, int stride, int pad);
  void init_params(uint64_t seed);

  int seq_len_;
  int levels_;
  int base_channels_;
  int temb_dim_;
  std::vector<int> channels_;   // per level
  std::vector<int> lengths_;    // per level
  Conv stem_;
  std::vector<Conv> blocks_;    // per level
  std::vector<Conv> downs_;     // levels-1
  std::vector<Conv> ups_;       // levels-1 (deepest first)
  Conv head_;
  std::vector<Linear> tprojs_;  // per level
  std::vector<double> params_;

  friend struct UnetCache;
};

// Builds a denoiser from its arch descriptor, e.g.
// {"kind":"mlp","hidden":128,"temb_dim":32} or
// {"kind":"unet","levels":4,"base_channels":128,"temb_dim":32}.
std::unique_ptr<DenoiserNet> make_denoiser(int seq_len, const nlohmann::json& arch, uint64_t init_seed);

// ---- stacked LSTM forecaster ------------------------------------------------

// Two-layer (by default) stacked LSTM over scalar inputs with a linear head.
// predict() warms the state on the context window and then rolls out
// autoregressively, feeding each output back as the next input; outputs are
// clamped to be non-negative. All values are in normalized units here; the
// predictor module handles token-space conversion.
class LstmNet {
 public:
  LstmNet(std::vector<int> hidden_sizes, uint64_t init_seed);

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<int>& hidden_sizes() const { return hidden_; }

  // context [n x W] -> predictions [n x horizon]
  Matrix predict(const Matrix& context, int horizon) const;

  // Backward-through-time: dpred [n x horizon] is the upstream gradient on
  // the (clamped) predictions; accumulates parameter gradients and optionally
  // the gradient on the context window.
  void predict_backward(const Matrix& context, int horizon, const Matrix& dpred,
                        std::vector<double>* grad, Matrix* dcontext = nullptr) const;

  nlohmann::json arch_json() const;

 private:
  struct Layer {
    int in = 0, hidden = 0;
    size_t wx = 0, wh = 0, b = 0;  // [in x 4H], [H x 4H], [4H]
  };
  struct Rollout;
  void run_forward(const Matrix& context, int horizon, Rollout* ro) const;

  std::vector<int> hidden_;
  std::vector<Layer> layers_;
  Linear head_;
  std::vector<double> params_;
};

}  // namespace drdfl::nn
