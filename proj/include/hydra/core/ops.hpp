// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. All ops validate shapes up front and
// raise ShapeError/ConfigError naming the offending extents.
#pragma once

#include <vector>

#include "hydra/core/tensor.hpp"

namespace hydra {

// elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// broadcasts
Tensor add_rowvec(const Tensor& x, const Tensor& v);    // [N,C] + [C]
Tensor mul_rowvec(const Tensor& x, const Tensor& v);    // [N,C] .* [C]
Tensor add_chanvec(const Tensor& x, const Tensor& v);   // [C,...] + [C]
Tensor add_framevec(const Tensor& x, const Tensor& v);  // [T,S,C] + [T,C]

// linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);              // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);                 // [B,m,k]x[B,k,n]
Tensor bmm_transpose_b(const Tensor& a, const Tensor& b);     // [B,m,k]x[B,n,k]^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[N,in] w[out,in]

// structure
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& indices);

// nonlinearities / normalization
Tensor softmax(const Tensor& x, int axis);
Tensor gelu(const Tensor& x);
// normalizes the last axis; gamma/beta have that axis's extent
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// conv / pooling
Tensor conv3d(const Tensor& x, const Tensor& kernel, int64_t st, int64_t sh, int64_t sw);
Tensor avg_pool2d(const Tensor& x, int64_t out_h, int64_t out_w);  // [C,H,W]
// per-frame spatial mean pooling on token layout [T, H*W, C] -> [T, h*w, C]
Tensor avg_pool_tokens(const Tensor& x, int64_t in_h, int64_t in_w, int64_t out_h,
                       int64_t out_w);

// reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace hydra
