#pragma once

#include <vector>

#include "sarnas/tensor.hpp"

namespace sarnas {

/// A labeled minibatch. Immutable once handed to a training loop.
template <typename T>
struct Batch {
  Tensor<T> inputs;  // (B,C,T,N)
  std::vector<int> labels;
};

}  // namespace sarnas
