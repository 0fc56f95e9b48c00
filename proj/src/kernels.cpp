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

#include "drdfl/kernels.hpp"

#include <algorithm>
#include <cstring>

#include "drdfl/parallel.hpp"

namespace drdfl::kernels {

namespace {

// One row of C = A * B; inner accumulation order is fixed so the parallel
// and serial paths agree bitwise.
inline void gemm_nn_row(const double* a, const double* b, double* c, int i, int k, int n, bool accumulate) {
  double* crow = c + static_cast<size_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  const double* arow = a + static_cast<size_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double av = arow[p];
    if (av == 0.0) continue;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, int i, int m, int k, int n,
                        bool accumulate) {
  double* crow = c + static_cast<size_t>(i) * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<size_t>(p) * m + i];
    if (av == 0.0) continue;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, int i, int k, int n, bool accumulate) {
  const double* arow = a + static_cast<size_t>(i) * k;
  double* crow = c + static_cast<size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<size_t>(j) * k;
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
    if (accumulate) {
      crow[j] += acc;
    } else {
      crow[j] = acc;
    }
  }
}

constexpr size_t kChunk = 64;

double chunked_sum(std::span<const double> v) {
  double total = 0.0;
  for (size_t base = 0; base < v.size(); base += kChunk) {
    const size_t end = std::min(base + kChunk, v.size());
    double part = 0.0;
    for (size_t i = base; i < end; ++i) part += v[i];
    total += part;
  }
  return total;
}

inline void conv1d_fwd_one(const double* x, const double* w, const double* bias, double* y, int b,
                           int oc, int cin, int len, int cout, int ksize, int stride, int pad,
                           int out_len) {
  const double* xb = x + static_cast<size_t>(b) * cin * len;
  double* yrow = y + (static_cast<size_t>(b) * cout + oc) * out_len;
  const double* wrow = w + static_cast<size_t>(oc) * cin * ksize;
  const double b0 = bias != nullptr ? bias[oc] : 0.0;
  for (int o = 0; o < out_len; ++o) {
    double acc = b0;
    const int start = o * stride - pad;
    for (int ic = 0; ic < cin; ++ic) {
      const double* xc = xb + static_cast<size_t>(ic) * len;
      const double* wc = wrow + static_cast<size_t>(ic) * ksize;
      for (int q = 0; q < ksize; ++q) {
        const int pos = start + q;
        if (pos < 0 || pos >= len) continue;
        acc += wc[q] * xc[pos];
      }
    }
    yrow[o] = acc;
  }
}

inline void conv1d_bwd_x_one(const double* dy, const double* w, double* dx, int b, int ic, int cin,
                             int len, int cout, int ksize, int stride, int pad, int out_len) {
  double* dxc = dx + (static_cast<size_t>(b) * cin + ic) * len;
  std::fill(dxc, dxc + len, 0.0);
  for (int oc = 0; oc < cout; ++oc) {
    const double* dyrow = dy + (static_cast<size_t>(b) * cout + oc) * out_len;
    const double* wc = w + (static_cast<size_t>(oc) * cin + ic) * ksize;
    for (int o = 0; o < out_len; ++o) {
      const double g = dyrow[o];
      if (g == 0.0) continue;
      const int start = o * stride - pad;
      for (int q = 0; q < ksize; ++q) {
        const int pos = start + q;
        if (pos < 0 || pos >= len) continue;
        dxc[pos] += g * wc[q];
      }
    }
  }
}

// dW for one (oc, ic, q) triple accumulated serially over batch and
// positions; one writer per weight element keeps the result thread-invariant.
inline void conv1d_bwd_w_one(const double* x, const double* dy, double* dw, int idx, int batch,
                             int cin, int len, int cout, int ksize, int stride, int pad, int out_len) {
  const int q = idx % ksize;
  const int ic = (idx / ksize) % cin;
  const int oc = idx / (ksize * cin);
  double acc = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double* xc = x + (static_cast<size_t>(b) * cin + ic) * len;
    const double* dyrow = dy + (static_cast<size_t>(b) * cout + oc) * out_len;
    for (int o = 0; o < out_len; ++o) {
      const int pos = o * stride - pad + q;
      if (pos < 0 || pos >= len) continue;
      acc += dyrow[o] * xc[pos];
    }
  }
  dw[static_cast<size_t>(idx)] += acc;
}

}  // namespace

int conv1d_out_len(int len, int ksize, int stride, int pad) {
  return (len + 2 * pad - ksize) / stride + 1;
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  parallel::for_range(m, [&](int64_t i) { gemm_nn_row(a, b, c, static_cast<int>(i), k, n, accumulate); });
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  parallel::for_range(m, [&](int64_t i) { gemm_tn_row(a, b, c, static_cast<int>(i), m, k, n, accumulate); });
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  parallel::for_range(m, [&](int64_t i) { gemm_nt_row(a, b, c, static_cast<int>(i), k, n, accumulate); });
}

void col_sum(const double* x, double* y, int rows, int cols, bool accumulate) {
  parallel::for_range(cols, [&](int64_t j) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) acc += x[static_cast<size_t>(r) * cols + j];
    if (accumulate) {
      y[j] += acc;
    } else {
      y[j] = acc;
    }
  });
}

double reduce_sum(std::span<const double> v) { return chunked_sum(v); }

void conv1d_fwd(const double* x, const double* w, const double* bias, double* y, int batch, int cin,
                int len, int cout, int ksize, int stride, int pad) {
  const int out_len = conv1d_out_len(len, ksize, stride, pad);
  parallel::for_range(static_cast<int64_t>(batch) * cout, [&](int64_t idx) {
    conv1d_fwd_one(x, w, bias, y, static_cast<int>(idx / cout), static_cast<int>(idx % cout), cin, len,
                   cout, ksize, stride, pad, out_len);
  });
}

void conv1d_bwd_x(const double* dy, const double* w, double* dx, int batch, int cin, int len, int cout,
                  int ksize, int stride, int pad) {
  const int out_len = conv1d_out_len(len, ksize, stride, pad);
  parallel::for_range(static_cast<int64_t>(batch) * cin, [&](int64_t idx) {
    conv1d_bwd_x_one(dy, w, dx, static_cast<int>(idx / cin), static_cast<int>(idx % cin), cin, len, cout,
                     ksize, stride, pad, out_len);
  });
}

void conv1d_bwd_w(const double* x, const double* dy, double* dw, double* dbias, int batch, int cin,
                  int len, int cout, int ksize, int stride, int pad) {
  const int out_len = conv1d_out_len(len, ksize, stride, pad);
  parallel::for_range(static_cast<int64_t>(cout) * cin * ksize, [&](int64_t idx) {
    conv1d_bwd_w_one(x, dy, dw, static_cast<int>(idx), batch, cin, len, cout, ksize, stride, pad, out_len);
  });
  if (dbias != nullptr) {
    parallel::for_range(cout, [&](int64_t oc) {
      double acc = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* dyrow = dy + (static_cast<size_t>(b) * cout + oc) * out_len;
        for (int o = 0; o < out_len; ++o) acc += dyrow[o];
      }
      dbias[oc] += acc;
    });
  }
}

namespace serial {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_nn_row(a, b, c, i, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_tn_row(a, b, c, i, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) gemm_nt_row(a, b, c, i, k, n, accumulate);
}

void col_sum(const double* x, double* y, int rows, int cols, bool accumulate) {
  for (int j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) acc += x[static_cast<size_t>(r) * cols + j];
    if (accumulate) {
      y[j] += acc;
    } else {
      y[j] = acc;
    }
  }
}

double reduce_sum(std::span<const double> v) { return chunked_sum(v); }

void conv1d_fwd(const double* x, const double* w, const double* bias, double* y, int batch, int cin,
                int len, int cout, int ksize, int stride, int pad) {
  const int out_len = conv1d_out_len(len, ksize, stride, pad);
  for (int b = 0; b < batch; ++b)
    for (int oc = 0; oc < cout; ++oc)
      conv1d_fwd_one(x, w, bias, y, b, oc, cin, len, cout, ksize, stride, pad, out_len);
}

void conv1d_bwd_x(const double* dy, const double* w, double* dx, int batch, int cin, int len, int cout,
                  int ksize, int stride, int pad) {
  const int out_len = conv1d_out_len(len, ksize, stride, pad);
  for (int b = 0; b < batch; ++b)
    for (int ic = 0; ic < cin; ++ic)
      conv1d_bwd_x_one(dy, w, dx, b, ic, cin, len, cout, ksize, stride, pad, out_len);
}

void conv1d_bwd_w(const double* x, const double* dy, double* dw, double* dbias, int batch, int cin,
                  int len, int cout, int ksize, int stride, int pad) {
  const int out_len = conv1d_out_len(len, ksize, stride, pad);
  for (int idx = 0; idx < cout * cin * ksize; ++idx)
    conv1d_bwd_w_one(x, dy, dw, idx, batch, cin, len, cout, ksize, stride, pad, out_len);
  if (dbias != nullptr) {
    for (int oc = 0; oc < cout; ++oc) {
      double acc = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* dyrow = dy + (static_cast<size_t>(b) * cout + oc) * out_len;
        for (int o = 0; o < out_len; ++o) acc += dyrow[o];
      }
      dbias[oc] += acc;
    }
  }
}

}  // namespace serial

}  // namespace drdfl::kernels
