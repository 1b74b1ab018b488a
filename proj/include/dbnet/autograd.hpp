#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbnet/tensor.hpp"

namespace dbnet {

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
};

/// Shared handle to a tensor participating in a computation. Copies alias the
/// same storage; parameters are leaf variables with requires_grad set.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>(Node<T>{std::move(value), requires_grad})) {}

  bool defined() const { return node_ != nullptr; }
  // Handle semantics: constness of the handle does not extend to the node.
  Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }

  /// Gradient buffer, allocated zeroed on first access.
  std::span<T> grad() const { return node_->value.grad(); }
  bool has_grad() const { return node_->value.has_grad(); }
  void zero_grad() const { node_->value.zero_grad(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered record of differentiable operations. Single writer.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::shared_ptr<Node<T>> output;
    std::function<void()> backward;
  };

  void record(std::string op, const Var<T>& output, std::function<void()> backward) {
    records_.push_back(Record{std::move(op), output.node(), std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
  /// into every reachable input that requires a gradient. Clears the tape.
  void backward(Var<T>& loss) {
    if (records_.empty()) throw std::logic_error("backward called on an empty tape");
    if (records_.back().output != loss.node()) {
      throw std::logic_error("backward: loss is not the last recorded operation");
    }
    if (loss.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    }
    loss.grad()[0] = T{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->value.has_grad()) it->backward();
    }
    records_.clear();
  }

 private:
  std::vector<Record> records_;
};

enum class Mode { Train, Infer };

}  // namespace dbnet
