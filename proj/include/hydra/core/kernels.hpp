// SPDX-License-Identifier: Apache-2.0
//
// Raw-buffer numeric kernels. Every kernel comes in a serial and an OpenMP
// flavour; the OpenMP version parallelizes over independent output elements
// while each element keeps the serial reduction order, so the two are
// bitwise identical for any thread count. The unsuffixed entry points
// dispatch on problem size.
#pragma once

#include <cstdint>

namespace hydra::kern {

// Work threshold (in inner-loop multiply-adds) below which the dispatchers
// stay serial; parallel fork/join overhead dominates under this.
inline constexpr int64_t kParallelThreshold = 1 << 15;

int max_threads();

// --- matmul -----------------------------------------------------------
// c[m,n] = a[m,k] * b[k,n] (overwrites c)
void matmul_nn_serial(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);
void matmul_nn_omp(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);
void matmul_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);

// c[m,n] += a[m,k] * b[n,k]^T
void matmul_nt_acc_serial(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);
void matmul_nt_acc_omp(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);
void matmul_nt_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);

// c[m,n] = a[m,k] * b[n,k]^T (overwrites c)
void matmul_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);

// c[k,n] += a[m,k]^T * b[m,n]
void matmul_tn_acc_serial(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);
void matmul_tn_acc_omp(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);
void matmul_tn_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n);

// --- batched matmul ---------------------------------------------------
// c[b,m,n] = a[b,m,k] * bt[b,n,k]^T
void bmm_nt_serial(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);
void bmm_nt_omp(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);
void bmm_nt(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);

// c[b,m,n] = a[b,m,k] * b[b,k,n]
void bmm_nn_serial(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);
void bmm_nn_omp(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);
void bmm_nn(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);

// c[b,m,n] += variants used by backward passes
void bmm_nn_acc(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);
void bmm_nt_acc(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);
void bmm_tn_acc(double* c, const double* a, const double* b, int64_t nb, int64_t m, int64_t k, int64_t n);

// --- conv3d (valid, strided) -------------------------------------------
struct Conv3dDims {
  int64_t ci, ti, hi, wi;   // input  [ci, ti, hi, wi]
  int64_t co, kt, kh, kw;   // kernel [co, ci, kt, kh, kw]
  int64_t st, sh, sw;       // strides
  int64_t to, ho, wo;       // output [co, to, ho, wo]
};

void conv3d_fwd_serial(double* out, const double* x, const double* k, const Conv3dDims& d);
void conv3d_fwd_omp(double* out, const double* x, const double* k, const Conv3dDims& d);
void conv3d_fwd(double* out, const double* x, const double* k, const Conv3dDims& d);

// gx[ci,ti,hi,wi] += gather of gout against kernel
void conv3d_bwd_input_serial(double* gx, const double* gout, const double* k, const Conv3dDims& d);
void conv3d_bwd_input_omp(double* gx, const double* gout, const double* k, const Conv3dDims& d);
void conv3d_bwd_input(double* gx, const double* gout, const double* k, const Conv3dDims& d);

// gk[co,ci,kt,kh,kw] += correlation of gout with input
void conv3d_bwd_kernel_serial(double* gk, const double* gout, const double* x, const Conv3dDims& d);
void conv3d_bwd_kernel_omp(double* gk, const double* gout, const double* x, const Conv3dDims& d);
void conv3d_bwd_kernel(double* gk, const double* gout, const double* x, const Conv3dDims& d);

// --- row-wise softmax ---------------------------------------------------
// y[r,:] = softmax(x[r,:]) with max-subtraction, rows independent
void softmax_rows_serial(double* y, const double* x, int64_t rows, int64_t n);
void softmax_rows_omp(double* y, const double* x, int64_t rows, int64_t n);
void softmax_rows(double* y, const double* x, int64_t rows, int64_t n);

// gx[r,:] += y .* (g - sum(g .* y)) per row
void softmax_rows_bwd(double* gx, const double* g, const double* y, int64_t rows, int64_t n);

}  // namespace hydra::kern
