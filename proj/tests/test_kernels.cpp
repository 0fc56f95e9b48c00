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

#include <vector>

#include "drdfl/kernels.hpp"
#include "drdfl/parallel.hpp"
#include "drdfl/random.hpp"

using namespace drdfl;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed) {
  RandomStream s(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = s.normal();
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("gemm variants match the serial reference bitwise") {
  const int m = 17, k = 23, n = 13;
  const auto a = random_vec(m * k, 1);
  const auto b = random_vec(k * n, 2);
  const auto at = random_vec(k * m, 3);
  const auto bt = random_vec(n * k, 4);

  std::vector<double> c_ser(m * n), c_par(m * n);
  kernels::serial::gemm_nn(a.data(), b.data(), c_ser.data(), m, k, n);
  kernels::gemm_nn(a.data(), b.data(), c_par.data(), m, k, n);
  CHECK(c_ser == c_par);

  kernels::serial::gemm_tn(at.data(), b.data(), c_ser.data(), m, k, n);
  kernels::gemm_tn(at.data(), b.data(), c_par.data(), m, k, n);
  CHECK(c_ser == c_par);

  kernels::serial::gemm_nt(a.data(), bt.data(), c_ser.data(), m, k, n);
  kernels::gemm_nt(a.data(), bt.data(), c_par.data(), m, k, n);
  CHECK(c_ser == c_par);
}

TEST_CASE("gemm accumulate adds on top of existing values") {
  const int m = 3, k = 4, n = 2;
  const auto a = random_vec(m * k, 5);
  const auto b = random_vec(k * n, 6);
  std::vector<double> base(m * n, 1.5), once(m * n, 0.0);
  kernels::gemm_nn(a.data(), b.data(), once.data(), m, k, n);
  kernels::gemm_nn(a.data(), b.data(), base.data(), m, k, n, /*accumulate=*/true);
  for (int i = 0; i < m * n; ++i) CHECK(base[i] == doctest::Approx(1.5 + once[i]).epsilon(1e-14));
}

TEST_CASE("gemm_nn against a hand-computed 2x2 product") {
  const std::vector<double> a{1, 2, 3, 4};  // [[1,2],[3,4]]
  const std::vector<double> b{5, 6, 7, 8};  // [[5,6],[7,8]]
  std::vector<double> c(4);
  kernels::gemm_nn(a.data(), b.data(), c.data(), 2, 2, 2);
  CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("conv1d matches the serial reference bitwise") {
  const int batch = 5, cin = 3, len = 11, cout = 4, ksize = 3;
  const auto x = random_vec(batch * cin * len, 7);
  const auto w = random_vec(cout * cin * ksize, 8);
  const auto bias = random_vec(cout, 9);
  for (const int stride : {1, 2}) {
    const int out_len = kernels::conv1d_out_len(len, ksize, stride, 1);
    std::vector<double> y_ser(batch * cout * out_len), y_par(y_ser.size());
    kernels::serial::conv1d_fwd(x.data(), w.data(), bias.data(), y_ser.data(), batch, cin, len, cout, ksize, stride, 1);
    kernels::conv1d_fwd(x.data(), w.data(), bias.data(), y_par.data(), batch, cin, len, cout, ksize, stride, 1);
    CHECK(y_ser == y_par);

    const auto dy = random_vec(y_ser.size(), 10 + stride);
    std::vector<double> dx_ser(x.size()), dx_par(x.size());
    kernels::serial::conv1d_bwd_x(dy.data(), w.data(), dx_ser.data(), batch, cin, len, cout, ksize, stride, 1);
    kernels::conv1d_bwd_x(dy.data(), w.data(), dx_par.data(), batch, cin, len, cout, ksize, stride, 1);
    CHECK(dx_ser == dx_par);

    std::vector<double> dw_ser(w.size(), 0.0), dw_par(w.size(), 0.0);
    std::vector<double> db_ser(cout, 0.0), db_par(cout, 0.0);
    kernels::serial::conv1d_bwd_w(x.data(), dy.data(), dw_ser.data(), db_ser.data(), batch, cin, len, cout, ksize, stride, 1);
    kernels::conv1d_bwd_w(x.data(), dy.data(), dw_par.data(), db_par.data(), batch, cin, len, cout, ksize, stride, 1);
    CHECK(dw_ser == dw_par);
    CHECK(db_ser == db_par);
  }
}

TEST_CASE("conv1d forward against a hand-computed case") {
  // one batch, one channel, len 4, kernel [1, 2, 3], pad 1, stride 1
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> w{1, 2, 3};
  const std::vector<double> bias{0.5};
  std::vector<double> y(4);
  kernels::conv1d_fwd(x.data(), w.data(), bias.data(), y.data(), 1, 1, 4, 1, 3, 1, 1);
  // y[i] = 0.5 + 1*x[i-1] + 2*x[i] + 3*x[i+1] with zero padding
  CHECK(y[0] == doctest::Approx(0.5 + 0 + 2 * 1 + 3 * 2));
  CHECK(y[1] == doctest::Approx(0.5 + 1 + 2 * 2 + 3 * 3));
  CHECK(y[2] == doctest::Approx(0.5 + 2 + 2 * 3 + 3 * 4));
  CHECK(y[3] == doctest::Approx(0.5 + 3 + 2 * 4 + 0));
}

TEST_CASE("reduce_sum is chunk-deterministic and matches references") {
  const auto v = random_vec(1000, 11);
  const double a = kernels::reduce_sum(v);
  const double b = kernels::serial::reduce_sum(v);
  CHECK(a == b);
  double naive = 0.0;
  for (const double x : v) naive += x;
  CHECK(a == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("parallel switch does not change results") {
  const bool was = parallel::enabled();
  const int m = 9, k = 31, n = 8;
  const auto a = random_vec(m * k, 12);
  const auto b = random_vec(k * n, 13);
  std::vector<double> c_on(m * n), c_off(m * n);
  parallel::set_enabled(true);
  kernels::gemm_nn(a.data(), b.data(), c_on.data(), m, k, n);
  parallel::set_enabled(false);
  kernels::gemm_nn(a.data(), b.data(), c_off.data(), m, k, n);
  parallel::set_enabled(was);
  CHECK(c_on == c_off);
}

TEST_SUITE_END();
