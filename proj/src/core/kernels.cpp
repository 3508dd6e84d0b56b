// SPDX-License-Identifier: Apache-2.0
#include "hydra/core/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef HYDRA_OPENMP
#include <omp.h>
#endif

namespace hydra::kern {

int max_threads() {
#ifdef HYDRA_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

inline bool go_parallel(int64_t work) {
  return max_threads() > 1 && work >= kParallelThreshold;
}

// One output row of c = a*b, ikj order so the j loop vectorizes.
inline void matmul_nn_row(double* crow, const double* arow, const double* b,
                          int64_t k, int64_t n) {
  std::fill(crow, crow + n, 0.0);
  for (int64_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row_acc(double* crow, const double* arow, const double* b,
                              int64_t k, int64_t n) {
  for (int64_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] += acc;
  }
}

// One output row p of c[k,n] += a^T b, i.e. c[p,:] += sum_i a[i,p] * b[i,:]
inline void matmul_tn_row_acc(double* crow, const double* a, const double* b,
                              int64_t p, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    const double* brow = b + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

// --- matmul -----------------------------------------------------------

void matmul_nn_serial(double* c, const double* a, const double* b, int64_t m,
                      int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) matmul_nn_row(c + i * n, a + i * k, b, k, n);
}

void matmul_nn_omp(double* c, const double* a, const double* b, int64_t m,
                   int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) matmul_nn_row(c + i * n, a + i * k, b, k, n);
}

void matmul_nn(double* c, const double* a, const double* b, int64_t m,
               int64_t k, int64_t n) {
  if (go_parallel(m * k * n)) {
    matmul_nn_omp(c, a, b, m, k, n);
  } else {
    matmul_nn_serial(c, a, b, m, k, n);
  }
}

void matmul_nt_acc_serial(double* c, const double* a, const double* b,
                          int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) matmul_nt_row_acc(c + i * n, a + i * k, b, k, n);
}

void matmul_nt_acc_omp(double* c, const double* a, const double* b, int64_t m,
                       int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) matmul_nt_row_acc(c + i * n, a + i * k, b, k, n);
}

void matmul_nt_acc(double* c, const double* a, const double* b, int64_t m,
                   int64_t k, int64_t n) {
  if (go_parallel(m * k * n)) {
    matmul_nt_acc_omp(c, a, b, m, k, n);
  } else {
    matmul_nt_acc_serial(c, a, b, m, k, n);
  }
}

void matmul_nt(double* c, const double* a, const double* b, int64_t m,
               int64_t k, int64_t n) {
  std::fill(c, c + m * n, 0.0);
  matmul_nt_acc(c, a, b, m, k, n);
}

void matmul_tn_acc_serial(double* c, const double* a, const double* b,
                          int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) matmul_tn_row_acc(c + p * n, a, b, p, m, k, n);
}

void matmul_tn_acc_omp(double* c, const double* a, const double* b, int64_t m,
                       int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < k; ++p) matmul_tn_row_acc(c + p * n, a, b, p, m, k, n);
}

void matmul_tn_acc(double* c, const double* a, const double* b, int64_t m,
                   int64_t k, int64_t n) {
  if (go_parallel(m * k * n)) {
    matmul_tn_acc_omp(c, a, b, m, k, n);
  } else {
    matmul_tn_acc_serial(c, a, b, m, k, n);
  }
}

// --- batched matmul ---------------------------------------------------

void bmm_nt_serial(double* c, const double* a, const double* b, int64_t nb,
                   int64_t m, int64_t k, int64_t n) {
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t i = 0; i < m; ++i) {
      double* crow = c + (bi * m + i) * n;
      std::fill(crow, crow + n, 0.0);
      matmul_nt_row_acc(crow, a + (bi * m + i) * k, b + bi * n * k, k, n);
    }
}

void bmm_nt_omp(double* c, const double* a, const double* b, int64_t nb,
                int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t i = 0; i < m; ++i) {
      double* crow = c + (bi * m + i) * n;
      std::fill(crow, crow + n, 0.0);
      matmul_nt_row_acc(crow, a + (bi * m + i) * k, b + bi * n * k, k, n);
    }
}

void bmm_nt(double* c, const double* a, const double* b, int64_t nb, int64_t m,
            int64_t k, int64_t n) {
  if (go_parallel(nb * m * k * n)) {
    bmm_nt_omp(c, a, b, nb, m, k, n);
  } else {
    bmm_nt_serial(c, a, b, nb, m, k, n);
  }
}

void bmm_nn_serial(double* c, const double* a, const double* b, int64_t nb,
                   int64_t m, int64_t k, int64_t n) {
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t i = 0; i < m; ++i)
      matmul_nn_row(c + (bi * m + i) * n, a + (bi * m + i) * k, b + bi * k * n, k, n);
}

void bmm_nn_omp(double* c, const double* a, const double* b, int64_t nb,
                int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t i = 0; i < m; ++i)
      matmul_nn_row(c + (bi * m + i) * n, a + (bi * m + i) * k, b + bi * k * n, k, n);
}

void bmm_nn(double* c, const double* a, const double* b, int64_t nb, int64_t m,
            int64_t k, int64_t n) {
  if (go_parallel(nb * m * k * n)) {
    bmm_nn_omp(c, a, b, nb, m, k, n);
  } else {
    bmm_nn_serial(c, a, b, nb, m, k, n);
  }
}

void bmm_nn_acc(double* c, const double* a, const double* b, int64_t nb,
                int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for collapse(2) schedule(static) if (go_parallel(nb * m * k * n))
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t i = 0; i < m; ++i) {
      double* crow = c + (bi * m + i) * n;
      const double* arow = a + (bi * m + i) * k;
      const double* bmat = b + bi * k * n;
      for (int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = bmat + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
}

void bmm_nt_acc(double* c, const double* a, const double* b, int64_t nb,
                int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for collapse(2) schedule(static) if (go_parallel(nb * m * k * n))
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t i = 0; i < m; ++i)
      matmul_nt_row_acc(c + (bi * m + i) * n, a + (bi * m + i) * k, b + bi * n * k, k, n);
}

void bmm_tn_acc(double* c, const double* a, const double* b, int64_t nb,
                int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for collapse(2) schedule(static) if (go_parallel(nb * m * k * n))
  for (int64_t bi = 0; bi < nb; ++bi)
    for (int64_t p = 0; p < k; ++p)
      matmul_tn_row_acc(c + (bi * k + p) * n, a + bi * m * k, b + bi * m * n, p, m, k, n);
}

// --- conv3d -------------------------------------------------------------

namespace {

inline double conv3d_out_at(const double* x, const double* k, const Conv3dDims& d,
                            int64_t co, int64_t to, int64_t ho, int64_t wo) {
  double acc = 0.0;
  const int64_t t0 = to * d.st, h0 = ho * d.sh, w0 = wo * d.sw;
  for (int64_t ci = 0; ci < d.ci; ++ci) {
    const double* xc = x + ci * d.ti * d.hi * d.wi;
    const double* kc = k + (co * d.ci + ci) * d.kt * d.kh * d.kw;
    for (int64_t dt = 0; dt < d.kt; ++dt)
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        const double* xrow = xc + ((t0 + dt) * d.hi + (h0 + dh)) * d.wi + w0;
        const double* krow = kc + (dt * d.kh + dh) * d.kw;
        for (int64_t dw = 0; dw < d.kw; ++dw) acc += xrow[dw] * krow[dw];
      }
  }
  return acc;
}

inline void conv3d_fwd_chan(double* out, const double* x, const double* k,
                            const Conv3dDims& d, int64_t co) {
  double* o = out + co * d.to * d.ho * d.wo;
  for (int64_t to = 0; to < d.to; ++to)
    for (int64_t ho = 0; ho < d.ho; ++ho)
      for (int64_t wo = 0; wo < d.wo; ++wo)
        *o++ = conv3d_out_at(x, k, d, co, to, ho, wo);
}

// Gathers the gradient for one input channel; fixed traversal order keeps it
// bitwise stable across thread counts.
inline void conv3d_bwd_input_chan(double* gx, const double* gout, const double* k,
                                  const Conv3dDims& d, int64_t ci) {
  double* g = gx + ci * d.ti * d.hi * d.wi;
  for (int64_t t = 0; t < d.ti; ++t)
    for (int64_t h = 0; h < d.hi; ++h)
      for (int64_t w = 0; w < d.wi; ++w) {
        double acc = 0.0;
        for (int64_t co = 0; co < d.co; ++co) {
          const double* gc = gout + co * d.to * d.ho * d.wo;
          const double* kc = k + (co * d.ci + ci) * d.kt * d.kh * d.kw;
          for (int64_t dt = 0; dt < d.kt; ++dt) {
            const int64_t tr = t - dt;
            if (tr < 0 || tr % d.st != 0) continue;
            const int64_t to = tr / d.st;
            if (to >= d.to) continue;
            for (int64_t dh = 0; dh < d.kh; ++dh) {
              const int64_t hr = h - dh;
              if (hr < 0 || hr % d.sh != 0) continue;
              const int64_t ho = hr / d.sh;
              if (ho >= d.ho) continue;
              for (int64_t dw = 0; dw < d.kw; ++dw) {
                const int64_t wr = w - dw;
                if (wr < 0 || wr % d.sw != 0) continue;
                const int64_t wo = wr / d.sw;
                if (wo >= d.wo) continue;
                acc += gc[(to * d.ho + ho) * d.wo + wo] *
                       kc[(dt * d.kh + dh) * d.kw + dw];
              }
            }
          }
        }
        *g++ += acc;
      }
}

inline void conv3d_bwd_kernel_chan(double* gk, const double* gout, const double* x,
                                   const Conv3dDims& d, int64_t co) {
  const double* gc = gout + co * d.to * d.ho * d.wo;
  for (int64_t ci = 0; ci < d.ci; ++ci) {
    const double* xc = x + ci * d.ti * d.hi * d.wi;
    double* kc = gk + (co * d.ci + ci) * d.kt * d.kh * d.kw;
    for (int64_t dt = 0; dt < d.kt; ++dt)
      for (int64_t dh = 0; dh < d.kh; ++dh)
        for (int64_t dw = 0; dw < d.kw; ++dw) {
          double acc = 0.0;
          for (int64_t to = 0; to < d.to; ++to)
            for (int64_t ho = 0; ho < d.ho; ++ho)
              for (int64_t wo = 0; wo < d.wo; ++wo)
                acc += gc[(to * d.ho + ho) * d.wo + wo] *
                       xc[((to * d.st + dt) * d.hi + (ho * d.sh + dh)) * d.wi +
                          (wo * d.sw + dw)];
          kc[(dt * d.kh + dh) * d.kw + dw] += acc;
        }
  }
}

inline int64_t conv3d_work(const Conv3dDims& d) {
  return d.co * d.to * d.ho * d.wo * d.ci * d.kt * d.kh * d.kw;
}

}  // namespace

void conv3d_fwd_serial(double* out, const double* x, const double* k,
                       const Conv3dDims& d) {
  for (int64_t co = 0; co < d.co; ++co) conv3d_fwd_chan(out, x, k, d, co);
}

void conv3d_fwd_omp(double* out, const double* x, const double* k,
                    const Conv3dDims& d) {
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.co; ++co) conv3d_fwd_chan(out, x, k, d, co);
}

void conv3d_fwd(double* out, const double* x, const double* k, const Conv3dDims& d) {
  if (go_parallel(conv3d_work(d))) {
    conv3d_fwd_omp(out, x, k, d);
  } else {
    conv3d_fwd_serial(out, x, k, d);
  }
}

void conv3d_bwd_input_serial(double* gx, const double* gout, const double* k,
                             const Conv3dDims& d) {
  for (int64_t ci = 0; ci < d.ci; ++ci) conv3d_bwd_input_chan(gx, gout, k, d, ci);
}

void conv3d_bwd_input_omp(double* gx, const double* gout, const double* k,
                          const Conv3dDims& d) {
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < d.ci; ++ci) conv3d_bwd_input_chan(gx, gout, k, d, ci);
}

void conv3d_bwd_input(double* gx, const double* gout, const double* k,
                      const Conv3dDims& d) {
  if (go_parallel(conv3d_work(d))) {
    conv3d_bwd_input_omp(gx, gout, k, d);
  } else {
    conv3d_bwd_input_serial(gx, gout, k, d);
  }
}

void conv3d_bwd_kernel_serial(double* gk, const double* gout, const double* x,
                              const Conv3dDims& d) {
  for (int64_t co = 0; co < d.co; ++co) conv3d_bwd_kernel_chan(gk, gout, x, d, co);
}

void conv3d_bwd_kernel_omp(double* gk, const double* gout, const double* x,
                           const Conv3dDims& d) {
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.co; ++co) conv3d_bwd_kernel_chan(gk, gout, x, d, co);
}

void conv3d_bwd_kernel(double* gk, const double* gout, const double* x,
                       const Conv3dDims& d) {
  if (go_parallel(conv3d_work(d))) {
    conv3d_bwd_kernel_omp(gk, gout, x, d);
  } else {
    conv3d_bwd_kernel_serial(gk, gout, x, d);
  }
}

// --- softmax ------------------------------------------------------------

namespace {

inline void softmax_row(double* y, const double* x, int64_t n) {
  double mx = x[0];
  for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int64_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int64_t j = 0; j < n; ++j) y[j] *= inv;
}

}  // namespace

void softmax_rows_serial(double* y, const double* x, int64_t rows, int64_t n) {
  for (int64_t r = 0; r < rows; ++r) softmax_row(y + r * n, x + r * n, n);
}

void softmax_rows_omp(double* y, const double* x, int64_t rows, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) softmax_row(y + r * n, x + r * n, n);
}

void softmax_rows(double* y, const double* x, int64_t rows, int64_t n) {
  if (go_parallel(rows * n * 8)) {
    softmax_rows_omp(y, x, rows, n);
  } else {
    softmax_rows_serial(y, x, rows, n);
  }
}

void softmax_rows_bwd(double* gx, const double* g, const double* y, int64_t rows,
                      int64_t n) {
#pragma omp parallel for schedule(static) if (go_parallel(rows * n * 8))
  for (int64_t r = 0; r < rows; ++r) {
    const double* gr = g + r * n;
    const double* yr = y + r * n;
    double dot = 0.0;
    for (int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
    double* gxr = gx + r * n;
    for (int64_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
  }
}

}  // namespace hydra::kern
