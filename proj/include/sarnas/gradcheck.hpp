#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sarnas/tensor.hpp"

namespace sarnas {

struct GradCheckReport {
  double max_error = 0.0;  // worst per-element error, see check_gradients
  std::size_t elements = 0;
  std::string worst;  // "<input index>[<flat index>]: analytic vs numeric"
};

/// Compares reverse-mode gradients of `loss` against central differences
/// (L(x+h) - L(x-h)) / 2h for every element of every tensor in `wrt`.
/// Per-element error is |a - n| / max(|a|, |n|, floor). `loss` must rebuild
/// its graph from the current leaf values on each call.
template <typename T>
GradCheckReport check_gradients(const std::function<Tensor<T>()>& loss, const std::vector<Tensor<T>>& wrt,
                                double step = 1e-6, double floor = 1e-2);

/// Uniform random values in [lo, hi) from a seeded engine.
template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true);

/// Scalarizes `t` as sum(t * R) with a fixed random R, so every output
/// element contributes a distinct weight to the gradient.
template <typename T>
Tensor<T> random_projection(const Tensor<T>& t, std::uint64_t seed);

}  // namespace sarnas
