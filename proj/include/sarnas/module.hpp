#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sarnas/ops.hpp"
#include "sarnas/tensor.hpp"

namespace sarnas {

/// A trainable leaf tensor plus its optimizer state.
template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Shape shape, std::vector<T> init, bool with_momentum);

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  Tensor<T>& tensor() { return tensor_; }
  const Tensor<T>& tensor() const { return tensor_; }
  const Shape& shape() const { return tensor_.shape(); }
  std::size_t numel() const { return tensor_.numel(); }
  std::span<T> values() { return tensor_.mutable_values(); }
  std::span<const T> values() const { return tensor_.values(); }

  bool has_momentum() const { return !momentum_.empty(); }
  std::span<T> momentum() { return momentum_; }

 private:
  std::string name_;
  Tensor<T> tensor_;
  std::vector<T> momentum_;
};

/// Non-trainable named state that still belongs in a checkpoint (BN running stats).
template <typename T>
struct BufferRef {
  std::string name;
  Shape shape;
  std::vector<T>* data;
};

/// Base of every layer and network. Children and parameters are registered by
/// subclasses in construction order, which fixes checkpoint ordering.
template <typename T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  virtual Tensor<T> forward(const Tensor<T>& input) = 0;

  void set_training(bool training);
  bool training() const { return training_; }
  NormMode norm_mode() const { return training_ ? NormMode::Train : NormMode::Eval; }

  std::vector<Parameter<T>*> parameters();
  std::vector<BufferRef<T>> buffers();
  /// Total trainable element count.
  std::size_t parameter_count();

 protected:
  Parameter<T>& register_parameter(const std::string& name, Shape shape, std::vector<T> init);
  void register_buffer(const std::string& name, Shape shape, std::vector<T>* data);
  template <typename M>
  M& register_module(const std::string& name, std::unique_ptr<M> child) {
    M& ref = *child;
    children_.push_back({name, std::move(child)});
    return ref;
  }
  /// Registers a child that is owned elsewhere (e.g. by an OpInstance).
  void register_borrowed(const std::string& name, Module<T>& child) { borrowed_.push_back({name, &child}); }

 private:
  void collect_parameters(const std::string& prefix, std::vector<Parameter<T>*>& out);
  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out);

  struct Child {
    std::string name;
    std::unique_ptr<Module<T>> module;
  };
  struct Borrowed {
    std::string name;
    Module<T>* module;
  };
  bool training_ = true;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::string> param_names_;
  std::vector<BufferRef<T>> buffers_;
  std::vector<Child> children_;
  std::vector<Borrowed> borrowed_;
};

/// Momentum SGD: v <- momentum*v + g; w <- w - lr*v; then clears the grads.
/// Throws StateError if any parameter has no accumulated gradient.
template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, T lr, T momentum);

/// Copies of parameter values, used to stash and restore weights.
template <typename T>
using WeightSnapshot = std::vector<std::vector<T>>;

template <typename T>
WeightSnapshot<T> snapshot_values(std::span<Parameter<T>* const> params);
template <typename T>
void load_values(std::span<Parameter<T>* const> params, const WeightSnapshot<T>& snapshot);
template <typename T>
WeightSnapshot<T> snapshot_buffers(std::span<const BufferRef<T>> buffers);
template <typename T>
void load_buffers(std::span<const BufferRef<T>> buffers, const WeightSnapshot<T>& snapshot);

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params);
template <typename T>
void set_requires_grad(std::span<Parameter<T>* const> params, bool flag);

}  // namespace sarnas
