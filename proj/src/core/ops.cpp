// SPDX-License-Identifier: Apache-2.0
#include "hydra/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hydra/core/kernels.hpp"

namespace hydra {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Grads = std::vector<std::vector<double>*>;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = make_output(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.mutable_data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  wire_autograd(out, "add", {a, b}, [](const std::vector<double>& g, const Grads& pg) {
    for (int s = 0; s < 2; ++s) {
      if (!pg[s]) continue;
      auto& p = *pg[s];
      for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = make_output(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.mutable_data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  wire_autograd(out, "sub", {a, b}, [](const std::vector<double>& g, const Grads& pg) {
    if (pg[0]) {
      auto& p = *pg[0];
      for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
    }
    if (pg[1]) {
      auto& p = *pg[1];
      for (size_t i = 0; i < g.size(); ++i) p[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = make_output(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.mutable_data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  NodePtr an = a.node(), bn = b.node();
  wire_autograd(out, "mul", {a, b}, [an, bn](const std::vector<double>& g, const Grads& pg) {
    if (pg[0]) {
      auto& p = *pg[0];
      for (size_t i = 0; i < g.size(); ++i) p[i] += g[i] * bn->value[i];
    }
    if (pg[1]) {
      auto& p = *pg[1];
      for (size_t i = 0; i < g.size(); ++i) p[i] += g[i] * an->value[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_output(a.shape());
  const auto& av = a.data();
  auto& ov = out.mutable_data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  wire_autograd(out, "scale", {a}, [c](const std::vector<double>& g, const Grads& pg) {
    if (!pg[0]) return;
    auto& p = *pg[0];
    for (size_t i = 0; i < g.size(); ++i) p[i] += c * g[i];
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_output(a.shape());
  const auto& av = a.data();
  auto& ov = out.mutable_data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  wire_autograd(out, "add_scalar", {a}, [](const std::vector<double>& g, const Grads& pg) {
    if (!pg[0]) return;
    auto& p = *pg[0];
    for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || x.dim(1) != v.dim(0)) {
    throw ShapeError("add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
  }
  const int64_t n = x.dim(0), c = x.dim(1);
  Tensor out = make_output(x.shape());
  const auto& xv = x.data();
  const auto& vv = v.data();
  auto& ov = out.mutable_data();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t j = 0; j < c; ++j) ov[r * c + j] = xv[r * c + j] + vv[j];
  wire_autograd(out, "add_rowvec", {x, v},
                [n, c](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0]) {
                    auto& p = *pg[0];
                    for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
                  }
                  if (pg[1]) {
                    auto& p = *pg[1];
                    for (int64_t r = 0; r < n; ++r)
                      for (int64_t j = 0; j < c; ++j) p[j] += g[r * c + j];
                  }
                });
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 2 || v.ndim() != 1 || x.dim(1) != v.dim(0)) {
    throw ShapeError("mul_rowvec: " + shape_str(x.shape()) + " .* " + shape_str(v.shape()));
  }
  const int64_t n = x.dim(0), c = x.dim(1);
  Tensor out = make_output(x.shape());
  const auto& xv = x.data();
  const auto& vv = v.data();
  auto& ov = out.mutable_data();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t j = 0; j < c; ++j) ov[r * c + j] = xv[r * c + j] * vv[j];
  NodePtr xn = x.node(), vn = v.node();
  wire_autograd(out, "mul_rowvec", {x, v},
                [n, c, xn, vn](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0]) {
                    auto& p = *pg[0];
                    for (int64_t r = 0; r < n; ++r)
                      for (int64_t j = 0; j < c; ++j)
                        p[r * c + j] += g[r * c + j] * vn->value[j];
                  }
                  if (pg[1]) {
                    auto& p = *pg[1];
                    for (int64_t r = 0; r < n; ++r)
                      for (int64_t j = 0; j < c; ++j)
                        p[j] += g[r * c + j] * xn->value[r * c + j];
                  }
                });
  return out;
}

Tensor add_chanvec(const Tensor& x, const Tensor& v) {
  if (x.ndim() < 1 || v.ndim() != 1 || x.dim(0) != v.dim(0)) {
    throw ShapeError("add_chanvec: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
  }
  const int64_t c = x.dim(0);
  const int64_t inner = x.numel() / c;
  Tensor out = make_output(x.shape());
  const auto& xv = x.data();
  const auto& vv = v.data();
  auto& ov = out.mutable_data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < inner; ++i) ov[ch * inner + i] = xv[ch * inner + i] + vv[ch];
  wire_autograd(out, "add_chanvec", {x, v},
                [c, inner](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0]) {
                    auto& p = *pg[0];
                    for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
                  }
                  if (pg[1]) {
                    auto& p = *pg[1];
                    for (int64_t ch = 0; ch < c; ++ch)
                      for (int64_t i = 0; i < inner; ++i) p[ch] += g[ch * inner + i];
                  }
                });
  return out;
}

Tensor add_framevec(const Tensor& x, const Tensor& v) {
  if (x.ndim() != 3 || v.ndim() != 2 || x.dim(0) != v.dim(0) || x.dim(2) != v.dim(1)) {
    throw ShapeError("add_framevec: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
  }
  const int64_t t = x.dim(0), s = x.dim(1), c = x.dim(2);
  Tensor out = make_output(x.shape());
  const auto& xv = x.data();
  const auto& vv = v.data();
  auto& ov = out.mutable_data();
  for (int64_t ti = 0; ti < t; ++ti)
    for (int64_t si = 0; si < s; ++si)
      for (int64_t ci = 0; ci < c; ++ci)
        ov[(ti * s + si) * c + ci] = xv[(ti * s + si) * c + ci] + vv[ti * c + ci];
  wire_autograd(out, "add_framevec", {x, v},
                [t, s, c](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0]) {
                    auto& p = *pg[0];
                    for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
                  }
                  if (pg[1]) {
                    auto& p = *pg[1];
                    for (int64_t ti = 0; ti < t; ++ti)
                      for (int64_t si = 0; si < s; ++si)
                        for (int64_t ci = 0; ci < c; ++ci)
                          p[ti * c + ci] += g[(ti * s + si) * c + ci];
                  }
                });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_output({m, n});
  kern::matmul_nn(out.mutable_data().data(), a.data().data(), b.data().data(), m, k, n);
  NodePtr an = a.node(), bn = b.node();
  wire_autograd(out, "matmul", {a, b},
                [an, bn, m, k, n](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0])
                    kern::matmul_nt_acc(pg[0]->data(), g.data(), bn->value.data(), m, n, k);
                  if (pg[1])
                    kern::matmul_tn_acc(pg[1]->data(), an->value.data(), g.data(), m, k, n);
                });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = make_output({nb, m, n});
  kern::bmm_nn(out.mutable_data().data(), a.data().data(), b.data().data(), nb, m, k, n);
  NodePtr an = a.node(), bn = b.node();
  wire_autograd(out, "bmm", {a, b},
                [an, bn, nb, m, k, n](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0])
                    kern::bmm_nt_acc(pg[0]->data(), g.data(), bn->value.data(), nb, m, n, k);
                  if (pg[1])
                    kern::bmm_tn_acc(pg[1]->data(), an->value.data(), g.data(), nb, m, k, n);
                });
  return out;
}

Tensor bmm_transpose_b(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw ShapeError("bmm_transpose_b: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  Tensor out = make_output({nb, m, n});
  kern::bmm_nt(out.mutable_data().data(), a.data().data(), b.data().data(), nb, m, k, n);
  NodePtr an = a.node(), bn = b.node();
  wire_autograd(out, "bmm_transpose_b", {a, b},
                [an, bn, nb, m, k, n](const std::vector<double>& g, const Grads& pg) {
                  // d a[B,m,k] += g[B,m,n] * b[B,n,k]
                  if (pg[0])
                    kern::bmm_nn_acc(pg[0]->data(), g.data(), bn->value.data(), nb, m, n, k);
                  // d b[B,n,k] += g^T[B,n,m] * a[B,m,k]
                  if (pg[1])
                    kern::bmm_tn_acc(pg[1]->data(), g.data(), an->value.data(), nb, m, n, k);
                });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
  }
  const int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (b.ndim() != 1 || b.dim(0) != out_dim) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " for w " +
                     shape_str(w.shape()));
  }
  Tensor y = make_output({n, out_dim});
  kern::matmul_nt(y.mutable_data().data(), x.data().data(), w.data().data(), n, in, out_dim);
  {
    auto& yv = y.mutable_data();
    const auto& bv = b.data();
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = 0; j < out_dim; ++j) yv[r * out_dim + j] += bv[j];
  }
  NodePtr xn = x.node(), wn = w.node();
  wire_autograd(y, "linear", {x, w, b},
                [xn, wn, n, in, out_dim](const std::vector<double>& g, const Grads& pg) {
                  // dx[n,in] += g[n,out] * w[out,in]
                  if (pg[0])
                    kern::bmm_nn_acc(pg[0]->data(), g.data(), wn->value.data(), 1, n,
                                     out_dim, in);
                  // dw[out,in] += g^T[out,n] * x[n,in]
                  if (pg[1])
                    kern::bmm_tn_acc(pg[1]->data(), g.data(), xn->value.data(), 1, n,
                                     out_dim, in);
                  if (pg[2]) {
                    auto& p = *pg[2];
                    for (int64_t r = 0; r < n; ++r)
                      for (int64_t j = 0; j < out_dim; ++j) p[j] += g[r * out_dim + j];
                  }
                });
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  Tensor out = make_output(std::move(shape));
  out.mutable_data() = x.data();
  wire_autograd(out, "reshape", {x}, [](const std::vector<double>& g, const Grads& pg) {
    if (!pg[0]) return;
    auto& p = *pg[0];
    for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
  });
  return out;
}

namespace {

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const int nd = x.ndim();
  if (static_cast<int>(dims.size()) != nd) {
    throw ShapeError("permute: rank mismatch for " + shape_str(x.shape()));
  }
  std::vector<bool> used(static_cast<size_t>(nd), false);
  Shape out_shape(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    int d = dims[static_cast<size_t>(i)];
    if (d < 0 || d >= nd || used[static_cast<size_t>(d)]) {
      throw ShapeError("permute: invalid axis order");
    }
    used[static_cast<size_t>(d)] = true;
    out_shape[static_cast<size_t>(i)] = x.dim(d);
  }
  Tensor out = make_output(out_shape);
  const auto in_strides = contiguous_strides(x.shape());
  // stride in the input for each output axis
  std::vector<int64_t> map_strides(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i)
    map_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(dims[static_cast<size_t>(i)])];

  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  const int64_t total = out.numel();
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t src = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    ov[flat] = xv[src];
    for (int d = nd - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += map_strides[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      src -= map_strides[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  wire_autograd(out, "permute", {x},
                [map_strides, out_shape, nd](const std::vector<double>& g, const Grads& pg) {
                  if (!pg[0]) return;
                  auto& p = *pg[0];
                  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
                  int64_t src = 0;
                  const int64_t total = static_cast<int64_t>(g.size());
                  for (int64_t flat = 0; flat < total; ++flat) {
                    p[src] += g[flat];
                    for (int d = nd - 1; d >= 0; --d) {
                      idx[static_cast<size_t>(d)]++;
                      src += map_strides[static_cast<size_t>(d)];
                      if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
                      src -= map_strides[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
                      idx[static_cast<size_t>(d)] = 0;
                    }
                  }
                });
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw UsageError("concat: empty input list");
  const int nd = xs[0].ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("concat: bad axis");
  Shape out_shape = xs[0].shape();
  int64_t axis_total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != axis && x.dim(d) != out_shape[static_cast<size_t>(d)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(xs[0].shape()));
      }
    }
    axis_total += x.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<size_t>(d)];

  Tensor out = make_output(out_shape);
  auto& ov = out.mutable_data();
  const int64_t out_row = axis_total * inner;
  int64_t offset = 0;
  std::vector<int64_t> piece_len;
  piece_len.reserve(xs.size());
  for (const auto& x : xs) {
    const int64_t len = x.dim(axis) * inner;
    piece_len.push_back(len);
    const auto& xv = x.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(xv.begin() + o * len, xv.begin() + (o + 1) * len,
                ov.begin() + o * out_row + offset);
    }
    offset += len;
  }
  wire_autograd(out, "concat", xs,
                [outer, inner, out_row, piece_len](const std::vector<double>& g,
                                                   const Grads& pg) {
                  (void)inner;
                  int64_t offset = 0;
                  for (size_t s = 0; s < piece_len.size(); ++s) {
                    const int64_t len = piece_len[s];
                    if (pg[s]) {
                      auto& p = *pg[s];
                      for (int64_t o = 0; o < outer; ++o)
                        for (int64_t i = 0; i < len; ++i)
                          p[o * len + i] += g[o * out_row + offset + i];
                    }
                    offset += len;
                  }
                });
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("slice: bad axis");
  if (start < 0 || len < 1 || start + len > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " +
                     shape_str(x.shape()) + " axis " + std::to_string(axis));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);
  const int64_t in_row = x.dim(axis) * inner;
  const int64_t out_len = len * inner;

  Tensor out = make_output(out_shape);
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(xv.begin() + o * in_row + start * inner,
              xv.begin() + o * in_row + start * inner + out_len,
              ov.begin() + o * out_len);
  }
  wire_autograd(out, "slice", {x},
                [outer, inner, in_row, out_len, start](const std::vector<double>& g,
                                                       const Grads& pg) {
                  if (!pg[0]) return;
                  auto& p = *pg[0];
                  for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < out_len; ++i)
                      p[o * in_row + start * inner + i] += g[o * out_len + i];
                });
  return out;
}

Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& indices) {
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("index_select: bad axis");
  for (int64_t i : indices) {
    if (i < 0 || i >= x.dim(axis)) {
      throw ShapeError("index_select: index " + std::to_string(i) + " out of " +
                       shape_str(x.shape()) + " axis " + std::to_string(axis));
    }
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = static_cast<int64_t>(indices.size());
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);
  const int64_t in_row = x.dim(axis) * inner;
  const int64_t out_row = static_cast<int64_t>(indices.size()) * inner;

  Tensor out = make_output(out_shape);
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (int64_t o = 0; o < outer; ++o)
    for (size_t s = 0; s < indices.size(); ++s)
      std::copy(xv.begin() + o * in_row + indices[s] * inner,
                xv.begin() + o * in_row + (indices[s] + 1) * inner,
                ov.begin() + o * out_row + static_cast<int64_t>(s) * inner);
  wire_autograd(out, "index_select", {x},
                [outer, inner, in_row, out_row, indices](const std::vector<double>& g,
                                                         const Grads& pg) {
                  if (!pg[0]) return;
                  auto& p = *pg[0];
                  for (int64_t o = 0; o < outer; ++o)
                    for (size_t s = 0; s < indices.size(); ++s)
                      for (int64_t i = 0; i < inner; ++i)
                        p[o * in_row + indices[s] * inner + i] +=
                            g[o * out_row + static_cast<int64_t>(s) * inner + i];
                });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("softmax: bad axis");
  const int64_t n = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);

  Tensor out = make_output(x.shape());
  if (inner == 1) {
    kern::softmax_rows(out.mutable_data().data(), x.data().data(), outer, n);
  } else {
    const auto& xv = x.data();
    auto& ov = out.mutable_data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * n * inner + i;
        double mx = xv[base];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const double e = std::exp(xv[base + j * inner] - mx);
          ov[base + j * inner] = e;
          sum += e;
        }
        const double invs = 1.0 / sum;
        for (int64_t j = 0; j < n; ++j) ov[base + j * inner] *= invs;
      }
  }
  NodePtr on = out.node();
  wire_autograd(out, "softmax", {x},
                [on, outer, inner, n](const std::vector<double>& g, const Grads& pg) {
                  if (!pg[0]) return;
                  if (inner == 1) {
                    kern::softmax_rows_bwd(pg[0]->data(), g.data(), on->value.data(),
                                           outer, n);
                    return;
                  }
                  auto& p = *pg[0];
                  const auto& y = on->value;
                  for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < inner; ++i) {
                      const int64_t base = o * n * inner + i;
                      double dot = 0.0;
                      for (int64_t j = 0; j < n; ++j)
                        dot += g[base + j * inner] * y[base + j * inner];
                      for (int64_t j = 0; j < n; ++j)
                        p[base + j * inner] +=
                            y[base + j * inner] * (g[base + j * inner] - dot);
                    }
                });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = make_output(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (size_t i = 0; i < ov.size(); ++i) {
    ov[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  NodePtr xn = x.node();
  wire_autograd(out, "gelu", {x}, [xn](const std::vector<double>& g, const Grads& pg) {
    if (!pg[0]) return;
    auto& p = *pg[0];
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = xn->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      p[i] += g[i] * (cdf + v * pdf);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int nd = x.ndim();
  if (nd < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t c = x.dim(nd - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c) {
    throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " for channel extent " + std::to_string(c));
  }
  const int64_t rows = x.numel() / c;
  Tensor out = make_output(x.shape());
  auto mean_v = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto rstd_v = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto& ov = out.mutable_data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*mean_v)[static_cast<size_t>(r)] = mu;
    (*rstd_v)[static_cast<size_t>(r)] = rstd;
    double* orow = ov.data() + r * c;
    for (int64_t j = 0; j < c; ++j) orow[j] = (xr[j] - mu) * rstd * gv[j] + bv[j];
  }
  NodePtr xn = x.node(), gn = gamma.node();
  wire_autograd(
      out, "layer_norm", {x, gamma, beta},
      [xn, gn, mean_v, rstd_v, rows, c](const std::vector<double>& g, const Grads& pg) {
        const auto& xv = xn->value;
        const auto& gv = gn->value;
        for (int64_t r = 0; r < rows; ++r) {
          const double mu = (*mean_v)[static_cast<size_t>(r)];
          const double rstd = (*rstd_v)[static_cast<size_t>(r)];
          const double* xr = xv.data() + r * c;
          const double* gr = g.data() + r * c;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            const double xhat = (xr[j] - mu) * rstd;
            const double dxhat = gr[j] * gv[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          const double inv_c = 1.0 / static_cast<double>(c);
          if (pg[0]) {
            double* px = pg[0]->data() + r * c;
            for (int64_t j = 0; j < c; ++j) {
              const double xhat = (xr[j] - mu) * rstd;
              const double dxhat = gr[j] * gv[j];
              px[j] += rstd * (dxhat - inv_c * sum_dxhat - xhat * inv_c * sum_dxhat_xhat);
            }
          }
          if (pg[1]) {
            double* pgm = pg[1]->data();
            for (int64_t j = 0; j < c; ++j)
              pgm[j] += gr[j] * (xr[j] - mu) * rstd;
          }
          if (pg[2]) {
            double* pb = pg[2]->data();
            for (int64_t j = 0; j < c; ++j) pb[j] += gr[j];
          }
        }
      });
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& kernel, int64_t st, int64_t sh, int64_t sw) {
  if (x.ndim() != 4 || kernel.ndim() != 5) {
    throw ShapeError("conv3d: input " + shape_str(x.shape()) + " kernel " +
                     shape_str(kernel.shape()));
  }
  if (st < 1 || sh < 1 || sw < 1) throw ConfigError("conv3d: strides must be >= 1");
  kern::Conv3dDims d;
  d.ci = x.dim(0);
  d.ti = x.dim(1);
  d.hi = x.dim(2);
  d.wi = x.dim(3);
  d.co = kernel.dim(0);
  d.kt = kernel.dim(2);
  d.kh = kernel.dim(3);
  d.kw = kernel.dim(4);
  d.st = st;
  d.sh = sh;
  d.sw = sw;
  if (kernel.dim(1) != d.ci) {
    throw ShapeError("conv3d: kernel channels " + shape_str(kernel.shape()) +
                     " do not match input " + shape_str(x.shape()));
  }
  if (d.kt > d.ti || d.kh > d.hi || d.kw > d.wi) {
    throw ShapeError("conv3d: kernel " + shape_str(kernel.shape()) +
                     " larger than input " + shape_str(x.shape()));
  }
  d.to = (d.ti - d.kt) / st + 1;
  d.ho = (d.hi - d.kh) / sh + 1;
  d.wo = (d.wi - d.kw) / sw + 1;

  Tensor out = make_output({d.co, d.to, d.ho, d.wo});
  kern::conv3d_fwd(out.mutable_data().data(), x.data().data(), kernel.data().data(), d);
  NodePtr xn = x.node(), kn = kernel.node();
  wire_autograd(out, "conv3d", {x, kernel},
                [xn, kn, d](const std::vector<double>& g, const Grads& pg) {
                  if (pg[0]) kern::conv3d_bwd_input(pg[0]->data(), g.data(), kn->value.data(), d);
                  if (pg[1]) kern::conv3d_bwd_kernel(pg[1]->data(), g.data(), xn->value.data(), d);
                });
  return out;
}

Tensor avg_pool2d(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.ndim() != 3) throw ShapeError("avg_pool2d: expected [C,H,W], got " + shape_str(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h < 1 || out_w < 1 || h % out_h != 0 || w % out_w != 0) {
    throw ConfigError("avg_pool2d: output " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " does not divide input " + shape_str(x.shape()));
  }
  const int64_t bh = h / out_h, bw = w / out_w;
  const double inv = 1.0 / static_cast<double>(bh * bw);
  Tensor out = make_output({c, out_h, out_w});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t oy = 0; oy < out_h; ++oy)
      for (int64_t ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (int64_t dy = 0; dy < bh; ++dy)
          for (int64_t dx = 0; dx < bw; ++dx)
            acc += xv[(ch * h + oy * bh + dy) * w + ox * bw + dx];
        ov[(ch * out_h + oy) * out_w + ox] = acc * inv;
      }
  wire_autograd(out, "avg_pool2d", {x},
                [c, h, w, out_h, out_w, bh, bw, inv](const std::vector<double>& g,
                                                     const Grads& pg) {
                  if (!pg[0]) return;
                  auto& p = *pg[0];
                  for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t oy = 0; oy < out_h; ++oy)
                      for (int64_t ox = 0; ox < out_w; ++ox) {
                        const double gv = g[(ch * out_h + oy) * out_w + ox] * inv;
                        for (int64_t dy = 0; dy < bh; ++dy)
                          for (int64_t dx = 0; dx < bw; ++dx)
                            p[(ch * h + oy * bh + dy) * w + ox * bw + dx] += gv;
                      }
                });
  return out;
}

Tensor avg_pool_tokens(const Tensor& x, int64_t in_h, int64_t in_w, int64_t out_h,
                       int64_t out_w) {
  if (x.ndim() != 3 || x.dim(1) != in_h * in_w) {
    throw ShapeError("avg_pool_tokens: expected [T," + std::to_string(in_h * in_w) +
                     ",C], got " + shape_str(x.shape()));
  }
  if (out_h < 1 || out_w < 1 || in_h % out_h != 0 || in_w % out_w != 0) {
    throw ConfigError("avg_pool_tokens: output " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " does not divide " + std::to_string(in_h) +
                      "x" + std::to_string(in_w));
  }
  const int64_t t = x.dim(0), c = x.dim(2);
  const int64_t bh = in_h / out_h, bw = in_w / out_w;
  const double inv = 1.0 / static_cast<double>(bh * bw);
  Tensor out = make_output({t, out_h * out_w, c});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (int64_t ti = 0; ti < t; ++ti)
    for (int64_t oy = 0; oy < out_h; ++oy)
      for (int64_t ox = 0; ox < out_w; ++ox)
        for (int64_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int64_t dy = 0; dy < bh; ++dy)
            for (int64_t dx = 0; dx < bw; ++dx) {
              const int64_t s = (oy * bh + dy) * in_w + ox * bw + dx;
              acc += xv[(ti * in_h * in_w + s) * c + ch];
            }
          ov[(ti * out_h * out_w + oy * out_w + ox) * c + ch] = acc * inv;
        }
  wire_autograd(out, "avg_pool_tokens", {x},
                [t, c, in_h, in_w, out_h, out_w, bh, bw, inv](const std::vector<double>& g,
                                                              const Grads& pg) {
                  if (!pg[0]) return;
                  auto& p = *pg[0];
                  for (int64_t ti = 0; ti < t; ++ti)
                    for (int64_t oy = 0; oy < out_h; ++oy)
                      for (int64_t ox = 0; ox < out_w; ++ox)
                        for (int64_t ch = 0; ch < c; ++ch) {
                          const double gv =
                              g[(ti * out_h * out_w + oy * out_w + ox) * c + ch] * inv;
                          for (int64_t dy = 0; dy < bh; ++dy)
                            for (int64_t dx = 0; dx < bw; ++dx) {
                              const int64_t s = (oy * bh + dy) * in_w + ox * bw + dx;
                              p[(ti * in_h * in_w + s) * c + ch] += gv;
                            }
                        }
                });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_output({1});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.mutable_data()[0] = acc;
  const int64_t n = x.numel();
  wire_autograd(out, "sum", {x}, [n](const std::vector<double>& g, const Grads& pg) {
    if (!pg[0]) return;
    auto& p = *pg[0];
    for (int64_t i = 0; i < n; ++i) p[i] += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  Tensor out = make_output({1});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const int64_t n = x.numel();
  out.mutable_data()[0] = acc / static_cast<double>(n);
  wire_autograd(out, "mean", {x}, [n](const std::vector<double>& g, const Grads& pg) {
    if (!pg[0]) return;
    auto& p = *pg[0];
    const double gv = g[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) p[i] += gv;
  });
  return out;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  check_same_shape("mse_loss", a, b);
  Tensor out = make_output({1});
  const auto& av = a.data();
  const auto& bv = b.data();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    acc += d * d;
  }
  const int64_t n = a.numel();
  out.mutable_data()[0] = acc / static_cast<double>(n);
  NodePtr an = a.node(), bn = b.node();
  wire_autograd(out, "mse_loss", {a, b},
                [an, bn, n](const std::vector<double>& g, const Grads& pg) {
                  const double s = 2.0 * g[0] / static_cast<double>(n);
                  for (int64_t i = 0; i < n; ++i) {
                    const double d = s * (an->value[static_cast<size_t>(i)] -
                                          bn->value[static_cast<size_t>(i)]);
                    if (pg[0]) (*pg[0])[static_cast<size_t>(i)] += d;
                    if (pg[1]) (*pg[1])[static_cast<size_t>(i)] -= d;
                  }
                });
  return out;
}

}  // namespace hydra
