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

#include "drdfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"

namespace drdfl::nn {

using kernels::conv1d_bwd_w;
using kernels::conv1d_bwd_x;
using kernels::conv1d_fwd;
using kernels::conv1d_out_len;
using kernels::col_sum;
using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

// ---- optimizer --------------------------------------------------------------

void AdamState::reset(size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  step = 0;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& st, double lr,
               double sign) {
  if (st.m.size() != params.size()) st.reset(params.size());
  if (grad.size() != params.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  parallel::for_range(static_cast<int64_t>(params.size()), [&](int64_t i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] += sign * lr * mhat / (std::sqrt(vhat) + st.eps);
  });
}

// ---- pieces -----------------------------------------------------------------

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

void sinusoidal_embedding(double t, int dim, double* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / std::max(1, half));
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  if (dim % 2 == 1) out[dim - 1] = 0.0;
}

namespace {

Matrix embed_steps(const std::vector<int>& t, int dim) {
  Matrix e(static_cast<int>(t.size()), dim);
  for (size_t r = 0; r < t.size(); ++r) {
    sinusoidal_embedding(static_cast<double>(t[r]), dim, e.row(static_cast<int>(r)));
  }
  return e;
}

void init_uniform(std::vector<double>& params, size_t off, size_t count, double radius, RandomStream& s) {
  for (size_t i = 0; i < count; ++i) params[off + i] = radius * (2.0 * s.uniform() - 1.0);
}

}  // namespace

Linear::Linear(size_t* cursor, int in_dim, int out_dim) : in(in_dim), out(out_dim) {
  w = *cursor;
  *cursor += static_cast<size_t>(in) * out;
  b = *cursor;
  *cursor += static_cast<size_t>(out);
}

void Linear::init(std::vector<double>& params, RandomStream& s) const {
  init_uniform(params, w, static_cast<size_t>(in) * out, 1.0 / std::sqrt(static_cast<double>(in)), s);
  std::fill(params.begin() + static_cast<long>(b), params.begin() + static_cast<long>(b) + out, 0.0);
}

void Linear::forward(const double* params, const Matrix& x, Matrix* y) const {
  *y = Matrix(x.rows, out);
  gemm_nn(x.data.data(), params + w, y->data.data(), x.rows, in, out);
  parallel::for_range(x.rows, [&](int64_t r) {
    double* row = y->row(static_cast<int>(r));
    for (int j = 0; j < out; ++j) row[j] += params[b + j];
  });
}

void Linear::backward(const double* params, const Matrix& x, const Matrix& dy, std::vector<double>* grad,
                      Matrix* dx) const {
  if (grad != nullptr) {
    gemm_tn(x.data.data(), dy.data.data(), grad->data() + w, in, x.rows, out, /*accumulate=*/true);
    col_sum(dy.data.data(), grad->data() + b, dy.rows, out, /*accumulate=*/true);
  }
  if (dx != nullptr) {
    *dx = Matrix(x.rows, in);
    gemm_nt(dy.data.data(), params + w, dx->data.data(), dy.rows, out, in);
  }
}

// ---- MLP denoiser -----------------------------------------------------------

namespace {

struct MlpCache : DenoiserCache {
  Matrix input;  // [n x (L + E)]
  Matrix z1, h1, z2, h2;
};

}  // namespace

MlpDenoiser::MlpDenoiser(int seq_len, int hidden, int temb_dim, uint64_t init_seed)
    : seq_len_(seq_len), hidden_(hidden), temb_dim_(temb_dim) {
  if (seq_len < 1 || hidden < 1 || temb_dim < 2) throw std::invalid_argument("bad MLP denoiser shape");
  size_t cursor = 0;
  fc_in_ = Linear(&cursor, seq_len_ + temb_dim_, hidden_);
  fc_mid_ = Linear(&cursor, hidden_, hidden_);
  fc_out_ = Linear(&cursor, hidden_, seq_len_);
  params_.assign(cursor, 0.0);
  RandomStream s(init_seed);
  fc_in_.init(params_, s);
  fc_mid_.init(params_, s);
  fc_out_.init(params_, s);
}

Matrix MlpDenoiser::forward(const Matrix& x, const std::vector<int>& t, int /*t_max*/,
                            std::unique_ptr<DenoiserCache>* cache) const {
  if (x.cols != seq_len_ || static_cast<size_t>(x.rows) != t.size()) {
    throw std::invalid_argument("MLP denoiser input shape mismatch");
  }
  const Matrix temb = embed_steps(t, temb_dim_);
  Matrix input(x.rows, seq_len_ + temb_dim_);
  for (int r = 0; r < x.rows; ++r) {
    std::copy(x.row(r), x.row(r) + seq_len_, input.row(r));
    std::copy(temb.row(r), temb.row(r) + temb_dim_, input.row(r) + seq_len_);
  }
  Matrix z1, z2, out;
  fc_in_.forward(params_.data(), input, &z1);
  Matrix h1(z1.rows, z1.cols);
  for (size_t i = 0; i < z1.size(); ++i) h1.data[i] = silu(z1.data[i]);
  fc_mid_.forward(params_.data(), h1, &z2);
  Matrix h2(z2.rows, z2.cols);
  for (size_t i = 0; i < z2.size(); ++i) h2.data[i] = silu(z2.data[i]) + h1.data[i];
  fc_out_.forward(params_.data(), h2, &out);
  if (cache != nullptr) {
    auto c = std::make_unique<MlpCache>();
    c->input = std::move(input);
    c->z1 = std::move(z1);
    c->h1 = std::move(h1);
    c->z2 = std::move(z2);
    c->h2 = std::move(h2);
    *cache = std::move(c);
  }
  return out;
}

void MlpDenoiser::backward(const DenoiserCache& cache, const Matrix& grad_out,
                           std::vector<double>* grad) const {
  const auto& c = dynamic_cast<const MlpCache&>(cache);
  Matrix dh2;
  fc_out_.backward(params_.data(), c.h2, grad_out, grad, &dh2);
  Matrix dz2(dh2.rows, dh2.cols);
  for (size_t i = 0; i < dh2.size(); ++i) dz2.data[i] = dh2.data[i] * silu_grad(c.z2.data[i]);
  Matrix dh1;
  fc_mid_.backward(params_.data(), c.h1, dz2, grad, &dh1);
  for (size_t i = 0; i < dh1.size(); ++i) dh1.data[i] += dh2.data[i];  // residual skip
  Matrix dz1(dh1.rows, dh1.cols);
  for (size_t i = 0; i < dh1.size(); ++i) dz1.data[i] = dh1.data[i] * silu_grad(c.z1.data[i]);
  fc_in_.backward(params_.data(), c.input, dz1, grad, nullptr);
}

nlohmann::json MlpDenoiser::arch_json() const {
  return {{"kind", "mlp"}, {"hidden", hidden_}, {"temb_dim", temb_dim_}};
}

std::unique_ptr<DenoiserNet> MlpDenoiser::clone() const { return std::make_unique<MlpDenoiser>(*this); }

// ---- U-Net denoiser ---------------------------------------------------------

namespace {

// Flat [n][c][l] tensor.
struct Tens {
  int n = 0, c = 0, l = 0;
  std::vector<double> v;
  Tens() = default;
  Tens(int n_, int c_, int l_) : n(n_), c(c_), l(l_), v(static_cast<size_t>(n_) * c_ * l_, 0.0) {}
  double* at(int b, int ch) { return v.data() + (static_cast<size_t>(b) * c + ch) * l; }
  const double* at(int b, int ch) const { return v.data() + (static_cast<size_t>(b) * c + ch) * l; }
};

void silu_tens(const Tens& in, Tens* out) {
  *out = Tens(in.n, in.c, in.l);
  for (size_t i = 0; i < in.v.size(); ++i) out->v[i] = silu(in.v[i]);
}

void silu_grad_tens(const Tens& pre, const Tens& dpost, Tens* dpre) {
  *dpre = Tens(pre.n, pre.c, pre.l);
  for (size_t i = 0; i < pre.v.size(); ++i) dpre->v[i] = dpost.v[i] * silu_grad(pre.v[i]);
}

// Adds proj [n x c] to every position of t.
void add_broadcast(Tens* t, const Matrix& proj) {
  for (int b = 0; b < t->n; ++b)
    for (int ch = 0; ch < t->c; ++ch) {
      double* row = t->at(b, ch);
      const double p = proj.at(b, ch);
      for (int i = 0; i < t->l; ++i) row[i] += p;
    }
}

Matrix broadcast_grad(const Tens& dt) {
  Matrix g(dt.n, dt.c);
  for (int b = 0; b < dt.n; ++b)
    for (int ch = 0; ch < dt.c; ++ch) {
      const double* row = dt.at(b, ch);
      double acc = 0.0;
      for (int i = 0; i < dt.l; ++i) acc += row[i];
      g.at(b, ch) = acc;
    }
  return g;
}

void upsample2(const Tens& in, int target_len, Tens* out) {
  *out = Tens(in.n, in.c, target_len);
  for (int b = 0; b < in.n; ++b)
    for (int ch = 0; ch < in.c; ++ch) {
      const double* src = in.at(b, ch);
      double* dst = out->at(b, ch);
      for (int p = 0; p < target_len; ++p) dst[p] = src[p / 2];
    }
}

void upsample2_grad(const Tens& dout, int source_len, Tens* din) {
  *din = Tens(dout.n, dout.c, source_len);
  for (int b = 0; b < dout.n; ++b)
    for (int ch = 0; ch < dout.c; ++ch) {
      const double* src = dout.at(b, ch);
      double* dst = din->at(b, ch);
      for (int p = 0; p < dout.l; ++p) dst[p / 2] += src[p];
    }
}

void concat_channels(const Tens& a, const Tens& b, Tens* out) {
  *out = Tens(a.n, a.c + b.c, a.l);
  for (int r = 0; r < a.n; ++r) {
    for (int ch = 0; ch < a.c; ++ch)
      std::copy(a.at(r, ch), a.at(r, ch) + a.l, out->at(r, ch));
    for (int ch = 0; ch < b.c; ++ch)
      std::copy(b.at(r, ch), b.at(r, ch) + b.l, out->at(r, a.c + ch));
  }
}

void split_channels(const Tens& dcat, int c_a, Tens* da, Tens* db) {
  *da = Tens(dcat.n, c_a, dcat.l);
  *db = Tens(dcat.n, dcat.c - c_a, dcat.l);
  for (int r = 0; r < dcat.n; ++r) {
    for (int ch = 0; ch < c_a; ++ch)
      std::copy(dcat.at(r, ch), dcat.at(r, ch) + dcat.l, da->at(r, ch));
    for (int ch = c_a; ch < dcat.c; ++ch)
      std::copy(dcat.at(r, ch), dcat.at(r, ch) + dcat.l, db->at(r, ch - c_a));
  }
}

}  // namespace

struct UnetCache : DenoiserCache {
  Tens x;                       // [n,1,L]
  Matrix temb;                  // [n x E]
  std::vector<Tens> pre1;      // p_lvl (post projection, pre silu)
  std::vector<Tens> h;         // silu(p)
  std::vector<Tens> pre2;      // q_lvl
  std::vector<Tens> s;         // silu(q)
  std::vector<Tens> cat;       // per up level (indexed by lvl)
  std::vector<Tens> rpre;      // conv_up output pre silu (indexed by lvl)
  std::vector<Tens> u;         // silu(rpre) (indexed by lvl)
};

UnetDenoiser::Conv UnetDenoiser::make_conv(size_t* cursor, int cin, int cout, int ksize, int stride,
                                           int pad) {
  Conv c;
  c.cin = cin;
  c.cout = cout;
  c.ksize = ksize;
  c.stride = stride;
  c.pad = pad;
  c.w = *cursor;
  *cursor += static_cast<size_t>(cout) * cin * ksize;
  c.b = *cursor;
  *cursor += static_cast<size_t>(cout);
  return c;
}

UnetDenoiser::UnetDenoiser(int seq_len, int levels, int base_channels, int temb_dim, uint64_t init_seed)
    : seq_len_(seq_len), levels_(levels), base_channels_(base_channels), temb_dim_(temb_dim) {
  if (levels < 2) throw std::invalid_argument("unet needs at least 2 levels");
  int len = seq_len;
  for (int lvl = 0; lvl < levels_; ++lvl) {
    channels_.push_back(lvl == 0 ? base_channels_ : 2 * base_channels_);
    lengths_.push_back(len);
    if (len < 2) throw std::invalid_argument("sequence too short for this many unet levels");
    len = conv1d_out_len(len, 3, 2, 1);
  }
  size_t cursor = 0;
  stem_ = make_conv(&cursor, 1, channels_[0], 3, 1, 1);
  for (int lvl = 0; lvl < levels_; ++lvl) {
    blocks_.push_back(make_conv(&cursor, channels_[lvl], channels_[lvl], 3, 1, 1));
    tprojs_.emplace_back(&cursor, temb_dim_, channels_[lvl]);
  }
  for (int lvl = 0; lvl + 1 < levels_; ++lvl) {
    downs_.push_back(make_conv(&cursor, channels_[lvl], channels_[lvl + 1], 3, 2, 1));
  }
  for (int lvl = levels_ - 2; lvl >= 0; --lvl) {
    ups_.push_back(make_conv(&cursor, channels_[lvl + 1] + channels_[lvl], channels_[lvl], 3, 1, 1));
  }
  head_ = make_conv(&cursor, channels_[0], 1, 3, 1, 1);
  params_.assign(cursor, 0.0);
  init_params(init_seed);
}

void UnetDenoiser::init_params(uint64_t seed) {
  RandomStream s(seed);
  const auto init_conv = [&](const Conv& c) {
    init_uniform(params_, c.w, static_cast<size_t>(c.cout) * c.cin * c.ksize,
                 1.0 / std::sqrt(static_cast<double>(c.cin) * c.ksize), s);
    std::fill(params_.begin() + static_cast<long>(c.b), params_.begin() + static_cast<long>(c.b) + c.cout,
              0.0);
  };
  init_conv(stem_);
  for (int lvl = 0; lvl < levels_; ++lvl) {
    init_conv(blocks_[lvl]);
    tprojs_[lvl].init(params_, s);
  }
  for (const auto& c : downs_) init_conv(c);
  for (const auto& c : ups_) init_conv(c);
  init_conv(head_);
}

Matrix UnetDenoiser::forward(const Matrix& x, const std::vector<int>& t, int /*t_max*/,
                             std::unique_ptr<DenoiserCache>* cache) const {
  if (x.cols != seq_len_ || static_cast<size_t>(x.rows) != t.size()) {
    throw std::invalid_argument("unet input shape mismatch");
  }
  const int n = x.rows;
  const double* P = params_.data();
  auto c = std::make_unique<UnetCache>();
  c->x = Tens(n, 1, seq_len_);
  std::copy(x.data.begin(), x.data.end(), c->x.v.begin());
  c->temb = embed_steps(t, temb_dim_);
  c->pre1.resize(levels_);
  c->h.resize(levels_);
  c->pre2.resize(levels_);
  c->s.resize(levels_);
  c->cat.resize(levels_);
  c->rpre.resize(levels_);
  c->u.resize(levels_);

  const auto run_conv = [&](const Conv& cv, const Tens& in, int out_len, Tens* out) {
    *out = Tens(in.n, cv.cout, out_len);
    conv1d_fwd(in.v.data(), P + cv.w, P + cv.b, out->v.data(), in.n, cv.cin, in.l, cv.cout, cv.ksize,
               cv.stride, cv.pad);
  };

  // down path
  Tens z;
  run_conv(stem_, c->x, seq_len_, &z);
  for (int lvl = 0; lvl < levels_; ++lvl) {
    Matrix proj;
    tprojs_[lvl].forward(P, c->temb, &proj);
    c->pre1[lvl] = std::move(z);
    add_broadcast(&c->pre1[lvl], proj);
    silu_tens(c->pre1[lvl], &c->h[lvl]);
    run_conv(blocks_[lvl], c->h[lvl], lengths_[lvl], &c->pre2[lvl]);
    silu_tens(c->pre2[lvl], &c->s[lvl]);
    if (lvl + 1 < levels_) run_conv(downs_[lvl], c->s[lvl], lengths_[lvl + 1], &z);
  }

  // up path
  Tens u = c->s[levels_ - 1];
  for (int lvl = levels_ - 2; lvl >= 0; --lvl) {
    Tens up;
    upsample2(u, lengths_[lvl], &up);
    concat_channels(up, c->s[lvl], &c->cat[lvl]);
    run_conv(ups_[levels_ - 2 - lvl], c->cat[lvl], lengths_[lvl], &c->rpre[lvl]);
    silu_tens(c->rpre[lvl], &c->u[lvl]);
    u = c->u[lvl];
  }

  Tens out_t;
  run_conv(head_, u, seq_len_, &out_t);
  Matrix out(n, seq_len_);
  std::copy(out_t.v.begin(), out_t.v.end(), out.data.begin());
  if (cache != nullptr) *cache = std::move(c);
  return out;
}

void UnetDenoiser::backward(const DenoiserCache& cache, const Matrix& grad_out,
                            std::vector<double>* grad) const {
  const auto& c = dynamic_cast<const UnetCache&>(cache);
  const int n = grad_out.rows;
  const double* P = params_.data();
  double* G = grad->data();

  const auto conv_bwd = [&](const Conv& cv, const Tens& in, const Tens& dout, Tens* din) {
    conv1d_bwd_w(in.v.data(), dout.v.data(), G + cv.w, G + cv.b, in.n, cv.cin, in.l, cv.cout, cv.ksize,
                 cv.stride, cv.pad);
    if (din != nullptr) {
      *din = Tens(in.n, cv.cin, in.l);
      conv1d_bwd_x(dout.v.data(), P + cv.w, din->v.data(), in.n, cv.cin, in.l, cv.cout, cv.ksize,
                   cv.stride, cv.pad);
    }
  };

  Tens dout(n, 1, seq_len_);
  std::copy(grad_out.data.begin(), grad_out.data.end(), dout.v.begin());
  Tens du;
  conv_bwd(head_, levels_ >= 2 ? c.u[0] : c.s[0], dout, &du);

  // up path backward, shallow to deep
  std::vector<Tens> ds(levels_);
  for (int lvl = 0; lvl <= levels_ - 2; ++lvl) {
    Tens drpre;
    silu_grad_tens(c.rpre[lvl], du, &drpre);
    Tens dcat;
    conv_bwd(ups_[levels_ - 2 - lvl], c.cat[lvl], drpre, &dcat);
    Tens dup;
    split_channels(dcat, channels_[lvl + 1], &dup, &ds[lvl]);
    Tens dnext;
    upsample2_grad(dup, lengths_[lvl + 1], &dnext);
    du = std::move(dnext);
  }
  ds[levels_ - 1] = std::move(du);

  // down path backward, deep to shallow
  Tens dz;
  for (int lvl = levels_ - 1; lvl >= 0; --lvl) {
    if (lvl + 1 < levels_) {
      Tens dextra;
      conv_bwd(downs_[lvl], c.s[lvl], dz, &dextra);
      for (size_t i = 0; i < ds[lvl].v.size(); ++i) ds[lvl].v[i] += dextra.v[i];
    }
    Tens dpre2;
    silu_grad_tens(c.pre2[lvl], ds[lvl], &dpre2);
    Tens dh;
    conv_bwd(blocks_[lvl], c.h[lvl], dpre2, &dh);
    Tens dpre1;
    silu_grad_tens(c.pre1[lvl], dh, &dpre1);
    const Matrix dproj = broadcast_grad(dpre1);
    tprojs_[lvl].backward(P, c.temb, dproj, grad, nullptr);
    dz = std::move(dpre1);
  }
  conv_bwd(stem_, c.x, dz, nullptr);
}

nlohmann::json UnetDenoiser::arch_json() const {
  return {{"kind", "unet"},
          {"levels", levels_},
          {"base_channels", base_channels_},
          {"temb_dim", temb_dim_}};
}

std::unique_ptr<DenoiserNet> UnetDenoiser::clone() const { return std::make_unique<UnetDenoiser>(*this); }

std::unique_ptr<DenoiserNet> make_denoiser(int seq_len, const nlohmann::json& arch, uint64_t init_seed) {
  const std::string kind = arch.value("kind", "mlp");
  const int temb = arch.value("temb_dim", 32);
  if (kind == "mlp") {
    return std::make_unique<MlpDenoiser>(seq_len, arch.value("hidden", 128), temb, init_seed);
  }
  if (kind == "unet") {
    return std::make_unique<UnetDenoiser>(seq_len, arch.value("levels", 4), arch.value("base_channels", 128),
                                          temb, init_seed);
  }
  throw std::invalid_argument("unknown denoiser kind: " + kind);
}

// ---- stacked LSTM -----------------------------------------------------------

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

struct LstmNet::Rollout {
  int n = 0, context = 0, horizon = 0, steps = 0;
  // per layer, per step
  std::vector<std::vector<Matrix>> x;       // layer inputs
  std::vector<std::vector<Matrix>> gates;   // post-activation [i f g o], [n x 4H]
  std::vector<std::vector<Matrix>> cell;    // c_t
  std::vector<std::vector<Matrix>> tanh_c;  // tanh(c_t)
  std::vector<std::vector<Matrix>> hidden;  // h_t
  Matrix raw;    // head outputs before the clamp [n x horizon]
  Matrix preds;  // clamped predictions [n x horizon]
};

LstmNet::LstmNet(std::vector<int> hidden_sizes, uint64_t init_seed) : hidden_(std::move(hidden_sizes)) {
  if (hidden_.empty()) throw std::invalid_argument("LstmNet needs at least one layer");
  size_t cursor = 0;
  int in_dim = 1;
  for (const int h : hidden_) {
    if (h < 1) throw std::invalid_argument("hidden sizes must be positive");
    Layer l;
    l.in = in_dim;
    l.hidden = h;
    l.wx = cursor;
    cursor += static_cast<size_t>(in_dim) * 4 * h;
    l.wh = cursor;
    cursor += static_cast<size_t>(h) * 4 * h;
    l.b = cursor;
    cursor += static_cast<size_t>(4) * h;
    layers_.push_back(l);
    in_dim = h;
  }
  head_ = Linear(&cursor, hidden_.back(), 1);
  params_.assign(cursor, 0.0);
  RandomStream s(init_seed);
  for (const auto& l : layers_) {
    init_uniform(params_, l.wx, static_cast<size_t>(l.in) * 4 * l.hidden,
                 1.0 / std::sqrt(static_cast<double>(l.in)), s);
    init_uniform(params_, l.wh, static_cast<size_t>(l.hidden) * 4 * l.hidden,
                 1.0 / std::sqrt(static_cast<double>(l.hidden)), s);
    // forget-gate bias starts at 1
    for (int j = 0; j < 4 * l.hidden; ++j) {
      params_[l.b + j] = (j >= l.hidden && j < 2 * l.hidden) ? 1.0 : 0.0;
    }
  }
  head_.init(params_, s);
}

void LstmNet::run_forward(const Matrix& context, int horizon, Rollout* ro) const {
  const int n = context.rows;
  const int W = context.cols;
  const int num_layers = static_cast<int>(layers_.size());
  ro->n = n;
  ro->context = W;
  ro->horizon = horizon;
  ro->steps = W + horizon - 1;
  ro->x.assign(num_layers, {});
  ro->gates.assign(num_layers, {});
  ro->cell.assign(num_layers, {});
  ro->tanh_c.assign(num_layers, {});
  ro->hidden.assign(num_layers, {});
  ro->raw = Matrix(n, horizon);
  ro->preds = Matrix(n, horizon);

  std::vector<Matrix> h(num_layers), c(num_layers);
  for (int l = 0; l < num_layers; ++l) {
    h[l] = Matrix(n, layers_[l].hidden);
    c[l] = Matrix(n, layers_[l].hidden);
  }
  const double* P = params_.data();

  for (int s = 0; s < ro->steps; ++s) {
    Matrix input(n, 1);
    if (s < W) {
      for (int r = 0; r < n; ++r) input.at(r, 0) = context.at(r, s);
    } else {
      for (int r = 0; r < n; ++r) input.at(r, 0) = ro->preds.at(r, s - W);
    }
    for (int l = 0; l < num_layers; ++l) {
      const Layer& L = layers_[l];
      const int H = L.hidden;
      Matrix z(n, 4 * H);
      gemm_nn(input.data.data(), P + L.wx, z.data.data(), n, L.in, 4 * H);
      gemm_nn(h[l].data.data(), P + L.wh, z.data.data(), n, H, 4 * H, /*accumulate=*/true);
      parallel::for_range(n, [&](int64_t r) {
        double* zr = z.row(static_cast<int>(r));
        for (int j = 0; j < 4 * H; ++j) zr[j] += P[L.b + j];
      });
      Matrix gates(n, 4 * H), cell(n, H), tanh_cell(n, H), hid(n, H);
      parallel::for_range(n, [&](int64_t r) {
        const double* zr = z.row(static_cast<int>(r));
        double* gr = gates.row(static_cast<int>(r));
        const double* cprev = c[l].row(static_cast<int>(r));
        double* cr = cell.row(static_cast<int>(r));
        double* tr = tanh_cell.row(static_cast<int>(r));
        double* hr = hid.row(static_cast<int>(r));
        for (int j = 0; j < H; ++j) {
          const double gi = sigmoid(zr[j]);
          const double gf = sigmoid(zr[H + j]);
          const double gg = std::tanh(zr[2 * H + j]);
          const double go = sigmoid(zr[3 * H + j]);
          gr[j] = gi;
          gr[H + j] = gf;
          gr[2 * H + j] = gg;
          gr[3 * H + j] = go;
          cr[j] = gf * cprev[j] + gi * gg;
          tr[j] = std::tanh(cr[j]);
          hr[j] = go * tr[j];
        }
      });
      ro->x[l].push_back(input);
      ro->gates[l].push_back(std::move(gates));
      ro->tanh_c[l].push_back(tanh_cell);
      ro->cell[l].push_back(c[l]);  // cache c_{t-1}; c_t lives in c[l] after swap below
      c[l] = std::move(cell);
      h[l] = std::move(hid);
      ro->hidden[l].push_back(h[l]);
      input = h[l];
    }
    if (s >= W - 1) {
      Matrix y;
      head_.forward(P, h[num_layers - 1], &y);
      const int col = s - (W - 1);
      for (int r = 0; r < n; ++r) {
        ro->raw.at(r, col) = y.at(r, 0);
        ro->preds.at(r, col) = std::max(0.0, y.at(r, 0));
      }
    }
  }
}

Matrix LstmNet::predict(const Matrix& context, int horizon) const {
  if (context.cols < 1 || horizon < 1) throw std::invalid_argument("predict needs W >= 1 and horizon >= 1");
  for (const double v : context.data) {
    if (!std::isfinite(v)) throw std::domain_error("predict: non-finite context value");
  }
  Rollout ro;
  run_forward(context, horizon, &ro);
  return ro.preds;
}

void LstmNet::predict_backward(const Matrix& context, int horizon, const Matrix& dpred,
                               std::vector<double>* grad, Matrix* dcontext) const {
  Rollout ro;
  run_forward(context, horizon, &ro);
  const int n = ro.n;
  const int W = ro.context;
  const int num_layers = static_cast<int>(layers_.size());
  const double* P = params_.data();

  if (dcontext != nullptr) *dcontext = Matrix(n, W);
  // Gradient pending on each clamped prediction: upstream plus feedback uses.
  Matrix dpending = dpred;
  std::vector<Matrix> dh(num_layers), dc(num_layers);
  for (int l = 0; l < num_layers; ++l) {
    dh[l] = Matrix(n, layers_[l].hidden);
    dc[l] = Matrix(n, layers_[l].hidden);
  }

  for (int s = ro.steps - 1; s >= 0; --s) {
    if (s >= W - 1) {
      const int col = s - (W - 1);
      Matrix dy(n, 1);
      for (int r = 0; r < n; ++r) {
        dy.at(r, 0) = ro.raw.at(r, col) > 0.0 ? dpending.at(r, col) : 0.0;
      }
      Matrix dhead;
      head_.backward(P, ro.hidden[num_layers - 1][s], dy, grad, &dhead);
      for (size_t i = 0; i < dhead.size(); ++i) dh[num_layers - 1].data[i] += dhead.data[i];
    }
    for (int l = num_layers - 1; l >= 0; --l) {
      const Layer& L = layers_[l];
      const int H = L.hidden;
      const Matrix& gates = ro.gates[l][s];
      const Matrix& tanh_cell = ro.tanh_c[l][s];
      const Matrix& c_prev = ro.cell[l][s];
      Matrix dz(n, 4 * H);
      Matrix dc_prev(n, H);
      parallel::for_range(n, [&](int64_t r) {
        const double* gr = gates.row(static_cast<int>(r));
        const double* tr = tanh_cell.row(static_cast<int>(r));
        const double* cp = c_prev.row(static_cast<int>(r));
        const double* dhr = dh[l].row(static_cast<int>(r));
        double* dcr = dc[l].row(static_cast<int>(r));
        double* dzr = dz.row(static_cast<int>(r));
        double* dcpr = dc_prev.row(static_cast<int>(r));
        for (int j = 0; j < H; ++j) {
          const double gi = gr[j], gf = gr[H + j], gg = gr[2 * H + j], go = gr[3 * H + j];
          const double dho = dhr[j];
          const double dcell = dcr[j] + dho * go * (1.0 - tr[j] * tr[j]);
          const double di = dcell * gg;
          const double df = dcell * cp[j];
          const double dg = dcell * gi;
          const double dout = dho * tr[j];
          dzr[j] = di * gi * (1.0 - gi);
          dzr[H + j] = df * gf * (1.0 - gf);
          dzr[2 * H + j] = dg * (1.0 - gg * gg);
          dzr[3 * H + j] = dout * go * (1.0 - go);
          dcpr[j] = dcell * gf;
        }
      });
      if (grad != nullptr) {
        gemm_tn(ro.x[l][s].data.data(), dz.data.data(), grad->data() + L.wx, L.in, n, 4 * H, true);
        if (s > 0) {
          gemm_tn(ro.hidden[l][s - 1].data.data(), dz.data.data(), grad->data() + L.wh, H, n, 4 * H, true);
        }
        col_sum(dz.data.data(), grad->data() + L.b, n, 4 * H, true);
      }
      // carry to previous step
      Matrix dh_prev(n, H);
      gemm_nt(dz.data.data(), P + L.wh, dh_prev.data.data(), n, 4 * H, H);
      dh[l] = std::move(dh_prev);
      dc[l] = std::move(dc_prev);
      // input grad: to the layer below or to the step input
      Matrix dx(n, L.in);
      gemm_nt(dz.data.data(), P + L.wx, dx.data.data(), n, 4 * H, L.in);
      if (l > 0) {
        for (size_t i = 0; i < dx.size(); ++i) dh[l - 1].data[i] += dx.data[i];
      } else {
        if (s < W) {
          if (dcontext != nullptr) {
            for (int r = 0; r < n; ++r) dcontext->at(r, s) += dx.at(r, 0);
          }
        } else {
          for (int r = 0; r < n; ++r) dpending.at(r, s - W) += dx.at(r, 0);
        }
      }
    }
  }
}

nlohmann::json LstmNet::arch_json() const {
  return {{"kind", "lstm"}, {"hidden", hidden_}};
}

}  // namespace drdfl::nn
