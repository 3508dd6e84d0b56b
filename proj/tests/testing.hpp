// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test suites: finite-difference gradient checking
// and small comparison utilities. The checker is independent of the autodiff
// path it validates: it only re-evaluates the forward closure.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hydra/core/ops.hpp"
#include "hydra/core/tensor.hpp"

namespace hydra::testing {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Relative error with an absolute-error regime for near-zero pairs: values
// whose magnitudes are both below `tiny` are compared absolutely against
// tiny instead (central differences carry ~1e-10 absolute noise).
inline double rel_err(double a, double b, double tiny = 1e-6) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < tiny) return std::abs(a - b) / tiny;
  return std::abs(a - b) / scale;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

// Central finite differences on every element of `leaf` against the analytic
// gradient produced by forward().backward(). `forward` must rebuild the graph
// from the leaf's current data on each call.
inline GradCheckResult grad_check(Tensor& leaf, const std::function<Tensor()>& forward,
                                  double step = 1e-6) {
  Tensor loss = forward();
  leaf.zero_grad();
  loss.backward();
  const std::vector<double> analytic = leaf.grad();

  GradCheckResult res;
  auto& data = leaf.mutable_data();
  for (size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + step;
    const double up = forward().item();
    data[i] = saved - step;
    const double dn = forward().item();
    data[i] = saved;
    const double fd = (up - dn) / (2.0 * step);
    res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[i], fd));
    res.checked++;
  }
  return res;
}

// Same but only on a subset of elements (for large leaves).
inline GradCheckResult grad_check_sampled(Tensor& leaf,
                                          const std::function<Tensor()>& forward,
                                          const std::vector<int64_t>& elems,
                                          double step = 1e-6) {
  Tensor loss = forward();
  leaf.zero_grad();
  loss.backward();
  const std::vector<double> analytic = leaf.grad();

  GradCheckResult res;
  auto& data = leaf.mutable_data();
  for (int64_t i : elems) {
    const double saved = data[static_cast<size_t>(i)];
    data[static_cast<size_t>(i)] = saved + step;
    const double up = forward().item();
    data[static_cast<size_t>(i)] = saved - step;
    const double dn = forward().item();
    data[static_cast<size_t>(i)] = saved;
    const double fd = (up - dn) / (2.0 * step);
    res.max_rel_err =
        std::max(res.max_rel_err, rel_err(analytic[static_cast<size_t>(i)], fd));
    res.checked++;
  }
  return res;
}

// Weighted-sum scalarizer so every output element participates in the loss
// with a distinct coefficient.
inline Tensor weighted_sum(const Tensor& t, uint64_t seed = 17) {
  Rng rng(seed);
  Tensor w = Tensor::rand_uniform(t.shape(), rng, 0.25, 1.75);
  return sum(mul(t, w));
}

}  // namespace hydra::testing
