#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace carbongrid {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode gradient.
///
/// Tensors are cheap handles: copies share the underlying storage. Values are
/// immutable once created except through `assign` on leaves, which the
/// optimizer uses between steps.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }
  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty(); }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  /// Overwrites a leaf's values in place. Shape must be unchanged.
  void assign(std::span<const double> values);
  /// Copy of the values without gradient history.
  Tensor detach() const;

  const char* op_name() const { return node_->op; }

  // Internal: used by ops and the backward pass.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse topological traversal order for one scalar loss.
class Graph {
 public:
  static Graph trace(const Tensor& loss);

  std::size_t size() const { return order_.size(); }
  /// Runs the backward pass, accumulating into every requires_grad leaf.
  void backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;  // topological, inputs first
};

/// Convenience: trace and run backward from a scalar loss.
void backward(const Tensor& loss);

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace carbongrid
