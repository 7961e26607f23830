#include "carbongrid/tensor.hpp"

#include <cmath>
#include <numeric>
#include <unordered_set>

#include "carbongrid/errors.hpp"

namespace carbongrid {

namespace {
thread_local bool g_grad_enabled = true;

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string("non-finite value in ") + what);
    }
  }
}
}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  require_finite(data, "tensor construction");
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::assign(std::span<const double> values) {
  if (!is_leaf()) throw ContractError("assign() is only valid on leaf tensors");
  if (values.size() != size()) {
    throw DimensionError("assign() size mismatch for shape " + shape_string(shape()));
  }
  require_finite(values, "assign");
  std::copy(values.begin(), values.end(), node_->data.begin());
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  require_finite(node->data, node->op);
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Graph Graph::trace(const Tensor& loss) {
  Graph g;
  g.root_ = loss.node();
  // Iterative post-order DFS yields a topological order (inputs first).
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(g.root_.get(), 0);
  seen.insert(g.root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void Graph::backward() {
  if (root_->data.size() != 1 || !root_->shape.empty()) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_string(root_->shape));
  }
  if (!root_->requires_grad) return;
  // Intermediate gradients start from zero for this pass.
  for (detail::Node* node : order_) {
    if (!node->parents.empty()) node->grad.clear();
  }
  root_->grad_buffer()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

void backward(const Tensor& loss) { Graph::trace(loss).backward(); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace carbongrid
