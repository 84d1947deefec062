#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hrkd/errors.hpp"
#include "hrkd/tensor.hpp"

namespace hrkd {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool has_grad = false;
  bool on_tape = false;
  std::size_t tape_index = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (!has_grad) {
      grad = Tensor(value.shape(), 0.0);
      has_grad = true;
    }
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Handle to a value in the computation graph. Copies share the node.
class Var {
 public:
  Var() : node_(std::make_shared<detail::Node>()) {}

  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->has_grad; }
  /// Gradient after backward; zeros if nothing reached this node.
  Tensor grad() const { return node_->has_grad ? node_->grad : Tensor(shape(), 0.0); }
  void zero_grad() {
    node_->has_grad = false;
    node_->grad = Tensor();
  }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  bool same_node(const Var& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Records differentiable operations of one step in creation order. Construction
/// activates the tape for the current thread; destruction releases every recorded
/// closure and restores the previously active tape.
class Tape {
 public:
  Tape() : previous_(active_slot()) { active_slot() = this; }
  ~Tape() {
    for (auto& n : nodes_) {
      n->inputs.clear();
      n->backward_fn = nullptr;
      n->on_tape = false;
    }
    active_slot() = previous_;
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_slot(); }

  std::size_t size() const { return nodes_.size(); }

  void record(const std::shared_ptr<detail::Node>& node) {
    node->on_tape = true;
    node->tape_index = nodes_.size();
    nodes_.push_back(node);
  }

  /// Reverse sweep from `loss`; every recorded node at or before it is visited once.
  void backward(const Var& loss) {
    const auto& root = loss.node();
    if (root->value.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root->value.shape()));
    }
    if (!root->on_tape || root->tape_index >= nodes_.size() || nodes_[root->tape_index] != root) {
      throw ContractError("backward() loss is not recorded on the active tape");
    }
    root->grad_buffer()[0] += 1.0;
    for (std::size_t i = root->tape_index + 1; i-- > 0;) {
      auto& n = *nodes_[i];
      if (n.has_grad && n.backward_fn) n.backward_fn(n);
    }
  }

 private:
  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }

  Tape* previous_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Disables recording while alive (evaluation passes, finite-difference probes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Populates grad on every requires_grad ancestor of `loss`.
inline void backward(const Var& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

namespace detail {

/// Builds the result node of a primitive. The backward closure receives the
/// result node (its grad is populated) and must accumulate into inputs that
/// require grad.
inline Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value));
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  }
  if (!needs) return out;
  Tape* tape = Tape::active();
  if (tape == nullptr) {
    throw ContractError("differentiable operation outside a Tape; use NoGradGuard for inference");
  }
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& v : inputs) node.inputs.push_back(v.node());
  node.backward_fn = std::move(backward_fn);
  tape->record(out.node());
  return out;
}

inline bool wants_grad(const Node& n) { return n.requires_grad; }

}  // namespace detail

}  // namespace hrkd
