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
#include <memory>

#include "drdfl/nn.hpp"

using namespace drdfl;

namespace {

Matrix random_matrix(int r, int c, uint64_t seed, double scale = 1.0) {
  RandomStream s(seed);
  Matrix m(r, c);
  for (auto& v : m.data) v = scale * s.normal();
  return m;
}

// Scalar loss 0.5 * sum(out^2) so d(loss)/d(out) = out.
double denoiser_loss(const nn::DenoiserNet& net, const Matrix& x, const std::vector<int>& t, int t_max) {
  const Matrix out = net.forward(x, t, t_max);
  double acc = 0.0;
  for (const double v : out.data) acc += 0.5 * v * v;
  return acc;
}

// Central finite differences on every parameter of a denoiser.
void check_denoiser_gradient(nn::DenoiserNet& net, const Matrix& x, const std::vector<int>& t, int t_max,
                             double step, double tol) {
  std::unique_ptr<nn::DenoiserCache> cache;
  const Matrix out = net.forward(x, t, t_max, &cache);
  std::vector<double> grad(net.params().size(), 0.0);
  net.backward(*cache, out, &grad);

  auto& params = net.params();
  RandomStream pick(99);
  const size_t checks = std::min<size_t>(params.size(), 60);
  for (size_t c = 0; c < checks; ++c) {
    const size_t i = static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(params.size()) - 1));
    const double keep = params[i];
    params[i] = keep + step;
    const double up = denoiser_loss(net, x, t, t_max);
    params[i] = keep - step;
    const double dn = denoiser_loss(net, x, t, t_max);
    params[i] = keep;
    const double fd = (up - dn) / (2.0 * step);
    const double scale = std::max({1.0, std::abs(fd), std::abs(grad[i])});
    CHECK(std::abs(fd - grad[i]) / scale < tol);
  }
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("adam minimizes a quadratic") {
  std::vector<double> p{5.0, -3.0};
  nn::AdamState st;
  for (int i = 0; i < 4000; ++i) {
    const std::vector<double> g{p[0], p[1]};
    nn::adam_step(p, g, st, 0.01);
  }
  CHECK(std::abs(p[0]) < 1e-3);
  CHECK(std::abs(p[1]) < 1e-3);
}

TEST_CASE("linear layer forward/backward against finite differences") {
  size_t cursor = 0;
  nn::Linear lin(&cursor, 4, 3);
  std::vector<double> params(cursor, 0.0);
  RandomStream s(7);
  lin.init(params, s);
  const Matrix x = random_matrix(5, 4, 8);

  Matrix y;
  lin.forward(params.data(), x, &y);
  std::vector<double> grad(params.size(), 0.0);
  Matrix dx;
  lin.backward(params.data(), x, y, &grad, &dx);  // loss = 0.5*sum(y^2)

  const double step = 1e-6;
  for (size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    Matrix yu;
    lin.forward(params.data(), x, &yu);
    double up = 0.0;
    for (const double v : yu.data) up += 0.5 * v * v;
    params[i] = keep - step;
    lin.forward(params.data(), x, &yu);
    double dn = 0.0;
    for (const double v : yu.data) dn += 0.5 * v * v;
    params[i] = keep;
    CHECK(grad[i] == doctest::Approx((up - dn) / (2 * step)).epsilon(1e-4));
  }
}

TEST_CASE("mlp denoiser gradient check") {
  nn::MlpDenoiser net(6, 16, 8, 42);
  const Matrix x = random_matrix(4, 6, 9);
  const std::vector<int> t{1, 3, 7, 10};
  check_denoiser_gradient(net, x, t, 10, 1e-5, 1e-5);
}

TEST_CASE("unet denoiser gradient check") {
  nn::UnetDenoiser net(12, 3, 6, 8, 43);
  const Matrix x = random_matrix(3, 12, 10);
  const std::vector<int> t{2, 5, 9};
  check_denoiser_gradient(net, x, t, 10, 1e-5, 2e-5);
}

TEST_CASE("unet handles the case-study length with 4 levels") {
  nn::UnetDenoiser net(36, 4, 8, 8, 44);
  const Matrix x = random_matrix(2, 36, 11);
  const Matrix out = net.forward(x, {1, 250}, 500);
  CHECK(out.rows == 2);
  CHECK(out.cols == 36);
  for (const double v : out.data) CHECK(std::isfinite(v));
}

TEST_CASE("denoiser factory round-trips the arch descriptor") {
  const auto mlp = nn::make_denoiser(10, {{"kind", "mlp"}, {"hidden", 32}, {"temb_dim", 8}}, 1);
  CHECK(mlp->arch_json()["kind"] == "mlp");
  const auto unet = nn::make_denoiser(36, {{"kind", "unet"}, {"levels", 4}, {"base_channels", 16}, {"temb_dim", 8}}, 1);
  CHECK(unet->arch_json()["base_channels"] == 16);
  CHECK_THROWS_AS(nn::make_denoiser(10, {{"kind", "nope"}}, 1), std::invalid_argument);
}

TEST_CASE("lstm rollout shapes and determinism") {
  nn::LstmNet net({8, 4}, 3);
  const Matrix ctx = random_matrix(3, 5, 12, 0.3);
  const Matrix a = net.predict(ctx, 7);
  const Matrix b = net.predict(ctx, 7);
  CHECK(a.rows == 3);
  CHECK(a.cols == 7);
  CHECK(a.data == b.data);
  for (const double v : a.data) CHECK(v >= 0.0);
}

TEST_CASE("lstm BPTT gradient against finite differences") {
  nn::LstmNet net({6, 3}, 5);
  const Matrix ctx = random_matrix(2, 4, 13, 0.5);
  const int horizon = 5;

  const auto loss_of = [&]() {
    const Matrix y = net.predict(ctx, horizon);
    double acc = 0.0;
    for (const double v : y.data) acc += 0.5 * v * v;
    return acc;
  };

  const Matrix y = net.predict(ctx, horizon);
  std::vector<double> grad(net.params().size(), 0.0);
  net.predict_backward(ctx, horizon, y, &grad);

  auto& params = net.params();
  RandomStream pick(100);
  const double step = 1e-6;
  for (int c = 0; c < 80; ++c) {
    const size_t i = static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(params.size()) - 1));
    const double keep = params[i];
    params[i] = keep + step;
    const double up = loss_of();
    params[i] = keep - step;
    const double dn = loss_of();
    params[i] = keep;
    const double fd = (up - dn) / (2 * step);
    const double scale = std::max({1.0, std::abs(fd), std::abs(grad[i])});
    CHECK(std::abs(fd - grad[i]) / scale < 2e-5);
  }
}

TEST_CASE("lstm context gradient against finite differences") {
  nn::LstmNet net({5}, 6);
  Matrix ctx = random_matrix(2, 4, 14, 0.5);
  const int horizon = 3;
  const Matrix y = net.predict(ctx, horizon);
  Matrix dctx;
  net.predict_backward(ctx, horizon, y, nullptr, &dctx);

  const double step = 1e-6;
  for (int r = 0; r < ctx.rows; ++r) {
    for (int c = 0; c < ctx.cols; ++c) {
      const double keep = ctx.at(r, c);
      ctx.at(r, c) = keep + step;
      const Matrix yu = net.predict(ctx, horizon);
      ctx.at(r, c) = keep - step;
      const Matrix yd = net.predict(ctx, horizon);
      ctx.at(r, c) = keep;
      double up = 0.0, dn = 0.0;
      for (const double v : yu.data) up += 0.5 * v * v;
      for (const double v : yd.data) dn += 0.5 * v * v;
      const double fd = (up - dn) / (2 * step);
      CHECK(dctx.at(r, c) == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("sinusoidal embedding is bounded and step-dependent") {
  std::vector<double> e1(8), e2(8);
  nn::sinusoidal_embedding(1.0, 8, e1.data());
  nn::sinusoidal_embedding(250.0, 8, e2.data());
  CHECK(e1 != e2);
  for (const double v : e1) CHECK(std::abs(v) <= 1.0);
}

TEST_SUITE_END();
