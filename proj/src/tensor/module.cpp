#include "sarnas/module.hpp"

#include "sarnas/error.hpp"

namespace sarnas {

template <typename T>
Parameter<T>::Parameter(std::string name, Shape shape, std::vector<T> init, bool with_momentum)
    : name_(std::move(name)), tensor_(Tensor<T>::leaf(std::move(shape), std::move(init), true)) {
  if (with_momentum) momentum_.assign(tensor_.numel(), T(0));
}

template <typename T>
void Module<T>::set_training(bool training) {
  training_ = training;
  for (auto& c : children_) c.module->set_training(training);
  for (auto& b : borrowed_) b.module->set_training(training);
}

template <typename T>
std::vector<Parameter<T>*> Module<T>::parameters() {
  std::vector<Parameter<T>*> out;
  collect_parameters("", out);
  return out;
}

template <typename T>
std::vector<BufferRef<T>> Module<T>::buffers() {
  std::vector<BufferRef<T>> out;
  collect_buffers("", out);
  return out;
}

template <typename T>
std::size_t Module<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->numel();
  return n;
}

template <typename T>
Parameter<T>& Module<T>::register_parameter(const std::string& name, Shape shape, std::vector<T> init) {
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(shape), std::move(init), true));
  param_names_.push_back(name);
  return *params_.back();
}

template <typename T>
void Module<T>::register_buffer(const std::string& name, Shape shape, std::vector<T>* data) {
  buffers_.push_back({name, std::move(shape), data});
}

template <typename T>
void Module<T>::collect_parameters(const std::string& prefix, std::vector<Parameter<T>*>& out) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i]->set_name(prefix + param_names_[i]);
    out.push_back(params_[i].get());
  }
  for (auto& c : children_) c.module->collect_parameters(prefix + c.name + ".", out);
  for (auto& b : borrowed_) b.module->collect_parameters(prefix + b.name + ".", out);
}

template <typename T>
void Module<T>::collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
  for (auto& b : buffers_) out.push_back({prefix + b.name, b.shape, b.data});
  for (auto& c : children_) c.module->collect_buffers(prefix + c.name + ".", out);
  for (auto& b : borrowed_) b.module->collect_buffers(prefix + b.name + ".", out);
}

template <typename T>
void sgd_momentum_step(std::span<Parameter<T>* const> params, T lr, T momentum) {
  for (auto* p : params) {
    if (!p->tensor().has_grad()) throw StateError("sgd_momentum_step: no gradient for " + p->name());
    if (!p->has_momentum()) throw StateError("sgd_momentum_step: " + p->name() + " has no momentum buffer");
  }
  for (auto* p : params) {
    auto w = p->values();
    auto v = p->momentum();
    auto g = p->tensor().grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
    p->tensor().zero_grad();
  }
}

template <typename T>
WeightSnapshot<T> snapshot_values(std::span<Parameter<T>* const> params) {
  WeightSnapshot<T> out;
  out.reserve(params.size());
  for (auto* p : params) out.emplace_back(p->values().begin(), p->values().end());
  return out;
}

template <typename T>
void load_values(std::span<Parameter<T>* const> params, const WeightSnapshot<T>& snapshot) {
  if (snapshot.size() != params.size()) throw DimensionError("snapshot size does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i]->values();
    if (dst.size() != snapshot[i].size()) throw DimensionError("snapshot entry size mismatch for " + params[i]->name());
    std::copy(snapshot[i].begin(), snapshot[i].end(), dst.begin());
  }
}

template <typename T>
WeightSnapshot<T> snapshot_buffers(std::span<const BufferRef<T>> buffers) {
  WeightSnapshot<T> out;
  for (const auto& b : buffers) out.push_back(*b.data);
  return out;
}

template <typename T>
void load_buffers(std::span<const BufferRef<T>> buffers, const WeightSnapshot<T>& snapshot) {
  if (snapshot.size() != buffers.size()) throw DimensionError("buffer snapshot size mismatch");
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].data = snapshot[i];
}

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->tensor().zero_grad();
}

template <typename T>
void set_requires_grad(std::span<Parameter<T>* const> params, bool flag) {
  for (auto* p : params) p->tensor().set_requires_grad(flag);
}

#define SARNAS_INSTANTIATE_MODULE(T)                                                          \
  template class Parameter<T>;                                                                \
  template class Module<T>;                                                                   \
  template void sgd_momentum_step(std::span<Parameter<T>* const>, T, T);                      \
  template WeightSnapshot<T> snapshot_values(std::span<Parameter<T>* const>);                 \
  template void load_values(std::span<Parameter<T>* const>, const WeightSnapshot<T>&);        \
  template WeightSnapshot<T> snapshot_buffers(std::span<const BufferRef<T>>);                 \
  template void load_buffers(std::span<const BufferRef<T>>, const WeightSnapshot<T>&);        \
  template void zero_grads(std::span<Parameter<T>* const>);                                   \
  template void set_requires_grad(std::span<Parameter<T>* const>, bool);

SARNAS_INSTANTIATE_MODULE(float)
SARNAS_INSTANTIATE_MODULE(double)

}  // namespace sarnas
