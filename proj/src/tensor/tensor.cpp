#include "sarnas/tensor.hpp"

#include <unordered_set>

#include "sarnas/error.hpp"

namespace sarnas {

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool enabled) { grad_enabled = enabled; }

template <typename T>
std::vector<T>& TapeNode<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad;
}

template <typename T>
Tensor<T> Tensor<T>::leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != shape.numel()) {
    throw DimensionError("leaf of shape " + shape.str() + " given " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<TapeNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> values(shape.numel(), value);
  return leaf(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return leaf(Shape{1}, {value}, requires_grad);
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw UsageError("requires_grad can only be toggled on leaves");
  node_->requires_grad = flag;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

template <typename T>
std::shared_ptr<TapeNode<T>> make_result(Shape shape, const char* op,
                                         std::initializer_list<const Tensor<T>*> inputs) {
  auto node = std::make_shared<TapeNode<T>>();
  node->value.assign(shape.numel(), T(0));
  node->shape = std::move(shape);
  node->op = op;
  if (GradMode::enabled()) {
    for (const auto* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const auto* in : inputs) node->parents.push_back(in->node_ptr());
    }
  }
  return node;
}

template <typename T>
std::shared_ptr<TapeNode<T>> make_result(Shape shape, const char* op, const std::vector<Tensor<T>>& inputs) {
  auto node = std::make_shared<TapeNode<T>>();
  node->value.assign(shape.numel(), T(0));
  node->shape = std::move(shape);
  node->op = op;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    }
  }
  return node;
}

template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward requires a scalar root, got shape " +
                     (root.defined() ? root.shape().str() : std::string("<undefined>")));
  }
  TapeNode<T>* top = root.node();
  if (!top->requires_grad) return;

  // Iterative post-order DFS; `order` ends up topologically sorted with
  // parents before children.
  std::vector<TapeNode<T>*> order;
  std::unordered_set<TapeNode<T>*> visited;
  std::vector<std::pair<TapeNode<T>*, std::size_t>> stack;
  stack.emplace_back(top, 0);
  visited.insert(top);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TapeNode<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.clear();
  }
  if (top->is_leaf()) {
    top->grad_buffer()[0] += T(1);
    return;
  }
  top->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TapeNode<T>* node = *it;
    if (node->is_leaf() || !node->has_grad()) continue;
    node->backward(*node);
  }
}

template struct TapeNode<float>;
template struct TapeNode<double>;
template class Tensor<float>;
template class Tensor<double>;
template std::shared_ptr<TapeNode<float>> make_result(Shape, const char*, std::initializer_list<const Tensor<float>*>);
template std::shared_ptr<TapeNode<double>> make_result(Shape, const char*,
                                                       std::initializer_list<const Tensor<double>*>);
template std::shared_ptr<TapeNode<float>> make_result(Shape, const char*, const std::vector<Tensor<float>>&);
template std::shared_ptr<TapeNode<double>> make_result(Shape, const char*, const std::vector<Tensor<double>>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace sarnas
