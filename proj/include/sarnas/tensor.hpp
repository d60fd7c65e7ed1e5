#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sarnas/shape.hpp"

namespace sarnas {

template <typename T>
struct TapeNode;

/// Backward rule of a produced node: reads `self.grad` and accumulates into
/// the grads of `self.parents`.
template <typename T>
using BackwardRule = std::function<void(TapeNode<T>& self)>;

/// One node of the reverse-mode differentiation graph.
template <typename T>
struct TapeNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something is accumulated into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TapeNode<T>>> parents;
  BackwardRule<T> backward;

  bool is_leaf() const { return !backward; }
  bool has_grad() const { return !grad.empty(); }
  /// Allocates a zero gradient buffer if none exists and returns it.
  std::vector<T>& grad_buffer();
};

/// Handle to a differentiable tensor. Copies share the underlying node, the
/// same way parameters and activations are shared between graph consumers.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TapeNode<T>> node) : node_(std::move(node)) {}

  /// A graph leaf holding `values`.
  static Tensor leaf(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  /// Releases the gradient buffer; the next accumulation starts from zero.
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);

  T item() const;
  T at(std::size_t flat) const { return node_->value[flat]; }

  TapeNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TapeNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TapeNode<T>> node_;
};

/// Thread-local switch; while disabled, ops record no parents or rules.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates the result node of an op. The node records parents and receives a
/// backward rule only when grad mode is on and some parent requires grad.
template <typename T>
std::shared_ptr<TapeNode<T>> make_result(Shape shape, const char* op,
                                         std::initializer_list<const Tensor<T>*> inputs);
template <typename T>
std::shared_ptr<TapeNode<T>> make_result(Shape shape, const char* op, const std::vector<Tensor<T>>& inputs);

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; interior gradients are reset at the start of each sweep.
template <typename T>
void backward(const Tensor<T>& root);

}  // namespace sarnas
