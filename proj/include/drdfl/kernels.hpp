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

#include <cstddef>
#include <span>

namespace drdfl::kernels {

// Dense kernels behind the network and dataset code. Each has a serial
// reference twin in kernels::serial with the identical accumulation order;
// the OpenMP versions only split loops whose iterations write disjoint
// outputs, so the two families agree bitwise (checked in tests, timed in the
// bench tool).

// C[m x n] = A[m x k] * B[k x n], C += when accumulate.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
// C[m x n] = A^T * B with A[k x m], B[k x n].
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
// C[m x n] = A * B^T with A[m x k], B[n x k].
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// y[r] += x[r x c] summed over rows (column sums).
void col_sum(const double* x, double* y, int rows, int cols, bool accumulate = true);

// Deterministic sum: fixed 64-element chunks, chunk partials added in order.
double reduce_sum(std::span<const double> v);

// 1-D convolution over [batch][cin][len] with weight [cout][cin][ksize],
// zero padding `pad`, stride `stride`. out has length (len + 2*pad - ksize)/stride + 1.
void conv1d_fwd(const double* x, const double* w, const double* bias, double* y, int batch, int cin,
                int len, int cout, int ksize, int stride, int pad);
void conv1d_bwd_x(const double* dy, const double* w, double* dx, int batch, int cin, int len, int cout,
                  int ksize, int stride, int pad);
void conv1d_bwd_w(const double* x, const double* dy, double* dw, double* dbias, int batch, int cin,
                  int len, int cout, int ksize, int stride, int pad);

int conv1d_out_len(int len, int ksize, int stride, int pad);

namespace serial {
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void col_sum(const double* x, double* y, int rows, int cols, bool accumulate = true);
double reduce_sum(std::span<const double> v);
void conv1d_fwd(const double* x, const double* w, const double* bias, double* y, int batch, int cin,
                int len, int cout, int ksize, int stride, int pad);
void conv1d_bwd_x(const double* dy, const double* w, double* dx, int batch, int cin, int len, int cout,
                  int ksize, int stride, int pad);
void conv1d_bwd_w(const double* x, const double* dy, double* dw, double* dbias, int batch, int cin,
                  int len, int cout, int ksize, int stride, int pad);
}  // namespace serial

}  // namespace drdfl::kernels
