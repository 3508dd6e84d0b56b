// SPDX-License-Identifier: Apache-2.0
#include "hydra/core/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace hydra {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.n_ = std::move(n);
  return t;
}

Tensor make_output(Shape shape) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(numel(n->shape)));
  return Tensor::wrap(std::move(n));
}

Tensor Tensor::zeros(Shape shape) { return make_output(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = make_output(std::move(shape));
  for (auto& x : t.mutable_data()) x = v;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (static_cast<int64_t>(data.size()) != numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return Tensor::wrap(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t = make_output(std::move(shape));
  for (auto& x : t.mutable_data()) x = stddev * rng.normal();
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = make_output(std::move(shape));
  for (auto& x : t.mutable_data()) x = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return n_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) {
    throw UsageError("at(): rank mismatch for shape " + shape_str(shape()));
  }
  int64_t flat = 0;
  int i = 0;
  for (int64_t v : idx) {
    flat = flat * n_->shape[static_cast<size_t>(i)] + v;
    ++i;
  }
  return n_->value[static_cast<size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool b) {
  if (b && !n_->is_leaf()) {
    throw UsageError("set_requires_grad on non-leaf node (op " +
                     std::string(n_->op) + ")");
  }
  n_->requires_grad = b;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (n_->grad.empty()) {
    throw UsageError("grad() requested but no gradient has been accumulated");
  }
  return n_->grad;
}

void Tensor::zero_grad() {
  if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

void wire_autograd(Tensor& out, const char* op, std::vector<Tensor> parents,
                   std::function<void(const std::vector<double>&,
                                      const std::vector<std::vector<double>*>&)>
                       backward_fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return;
  auto& n = *out.node();
  n.requires_grad = true;
  n.op = op;
  n.parents.reserve(parents.size());
  for (auto& p : parents) n.parents.push_back(p.node());
  n.backward_fn = std::move(backward_fn);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     shape_str(shape()));
  }
  if (!n_->requires_grad) return;

  // Post-order DFS over the requires_grad subgraph: parents precede
  // consumers, so the reversed list is a valid reverse-topological order and
  // each node is visited exactly once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({n_.get(), 0});
  seen.insert(n_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Per-call gradient buffers; leaf results are folded into the persistent
  // accumulator at the end so repeated backward calls add up.
  std::unordered_map<detail::Node*, std::vector<double>> gbuf;
  gbuf.reserve(order.size());
  gbuf[n_.get()] = {1.0};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto found = gbuf.find(node);
    if (found == gbuf.end()) continue;  // no gradient flowed here
    if (node->is_leaf()) continue;
    std::vector<double>& gout = found->second;  // stable under rehash
    std::vector<std::vector<double>*> pgrads(node->parents.size(), nullptr);
    for (size_t i = 0; i < node->parents.size(); ++i) {
      detail::Node* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto [slot, inserted] = gbuf.try_emplace(p);
      if (inserted) slot->second.assign(static_cast<size_t>(p->size()), 0.0);
      pgrads[i] = &slot->second;
    }
    node->backward_fn(gout, pgrads);
    // Interior gradients are not retained past their use.
    if (node != n_.get()) gbuf.erase(node);
  }

  for (auto& [node, g] : gbuf) {
    if (!node->is_leaf() || !node->requires_grad) continue;
    if (node->grad.empty()) node->grad.assign(g.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace hydra
