#include "bisvp/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace bisvp::num {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError("Tensor::from: non-finite value");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  Tensor t = wrap(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw AutodiffError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw AutodiffError("use of an undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw AutodiffError("use of an undefined tensor");
  if (!node_->is_leaf()) throw AutodiffError("mutable_data on a recorded (non-leaf) tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw AutodiffError("use of an undefined tensor");
  node_->requires_grad = flag;
  if (flag && node_->is_leaf()) {
    node_->grad.assign(node_->data.size(), 0.0);
  } else if (!flag) {
    node_->grad.clear();
  }
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size() && node_->requires_grad; }

bool Tensor::grad_written() const { return node_ && node_->grad_written; }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw AutodiffError("tensor has no gradient buffer");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) throw AutodiffError("tensor has no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  node_->grad_written = false;
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape();
  node->data = node_->data;
  return wrap(std::move(node));
}

void Tensor::backward() const {
  if (!node_) throw AutodiffError("backward on an undefined tensor");
  if (numel() != 1) throw AutodiffError("backward root must be a scalar, got shape " + shape_str(shape()));
  if (node_->consumed) throw AutodiffError("backward on a detached graph: tape already consumed");
  if (!node_->requires_grad) throw AutodiffError("backward on a detached graph: root does not require grad");

  // Iterative post-order DFS; reversing it gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (!p->requires_grad || visited.count(p)) continue;
      if (p->consumed) throw AutodiffError("backward on a detached graph: intermediate already consumed");
      if (!p->is_leaf()) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  if (node_->is_leaf()) {
    node_->grad_buffer()[0] += 1.0;
    return;
  }
  node_->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad_written) n->backward(*n);
  }
  for (detail::Node* n : order) {
    n->backward = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->consumed = true;
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward, const char* op_name) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op_name) + ": non-finite output");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (Tensor& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace detail

}  // namespace bisvp::num
