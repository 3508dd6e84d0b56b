// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode autodiff. A Tensor is a
// shared handle to a graph node; ops record parents and a backward closure.
// backward() walks the recorded graph once in reverse topological order and
// accumulates into the persistent .grad of requires_grad leaves.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hydra/core/errors.hpp"
#include "hydra/core/rng.hpp"

namespace hydra {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  // Persistent gradient accumulator; only leaves (no backward_fn) keep one.
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Adds d(loss)/d(parent_i) into *pgrads[i] given d(loss)/d(this) in gout.
  // pgrads entries are null for parents that do not need gradients.
  std::function<void(const std::vector<double>& gout,
                     const std::vector<std::vector<double>*>& pgrads)>
      backward_fn;
  const char* op = "leaf";

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->size(); }

  const std::vector<double>& data() const { return n_->value; }
  // Mutable access to raw values; only meaningful on leaves (optimizer
  // updates, test setup). Mutating an interior node invalidates its graph.
  std::vector<double>& mutable_data() { return n_->value; }

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b);

  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Scalar-loss reverse pass; accumulates into every requires_grad leaf
  // reachable in the recorded graph. Throws UsageError on non-scalar.
  void backward() const;

  // Graph node handle (used by op implementations).
  const std::shared_ptr<detail::Node>& node() const { return n_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> n_;
};

// Creates an uninitialized output node (op helper).
Tensor make_output(Shape shape);
// Marks `out` as produced from `parents` with the given backward closure iff
// any parent requires grad; otherwise leaves it a constant.
void wire_autograd(Tensor& out, const char* op,
                   std::vector<Tensor> parents,
                   std::function<void(const std::vector<double>&,
                                      const std::vector<std::vector<double>*>&)>
                       backward_fn);

// True if every element of every listed tensor is finite.
bool all_finite(const Tensor& t);

}  // namespace hydra
