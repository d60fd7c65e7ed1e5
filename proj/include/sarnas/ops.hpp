#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sarnas/tensor.hpp"

namespace sarnas {

struct Conv2dOptions {
  std::pair<std::size_t, std::size_t> stride{1, 1};
  std::pair<std::size_t, std::size_t> padding{0, 0};
  std::pair<std::size_t, std::size_t> dilation{1, 1};
  std::size_t groups = 1;
};

/// Output extent of a strided window along one axis; throws DimensionError
/// naming `axis` when the dilated kernel does not fit the padded input.
std::size_t window_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                                 std::size_t dilation, const char* axis);

/// Zero-padded 2-d convolution of (B,Cin,T,N) with weights (Cout,Cin/groups,kh,kw). No bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Conv2dOptions& options = {});

enum class PoolMode { Max, Average };

/// 3x3 (or `kernel`) pooling with symmetric padding. Max mode routes the
/// gradient to the first maximum in row-major window order; average mode
/// divides by the number of in-bounds cells.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolMode mode, std::size_t stride, std::size_t kernel = 3,
                 std::size_t padding = 1);

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit RunningStats(std::size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

enum class NormMode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over (B,T,N). Train mode uses batch statistics
/// and updates `stats` by EMA with `momentum`; eval mode uses `stats`.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                      RunningStats<T>& stats, NormMode mode, T eps = T(kBatchNormEps),
                      T momentum = T(kBatchNormMomentum));

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

/// (B,F) x (G,F)^T + (G) -> (B,G)
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// (B,C,T,N) -> (B,C), mean over frames and joints.
template <typename T>
Tensor<T> global_avg_spatial(const Tensor<T>& input);

/// Sum of all elements, as a shape-(1) tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

/// Concatenates rank-4 tensors along the channel axis.
template <typename T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& inputs);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product of equally shaped tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor);

/// Multiplies every (b,c) plane of a (B,C,T,N) tensor by gate(b,c).
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& input, const Tensor<T>& gate);

/// out[..., t, n] = in[..., t+1, n+1], zero where the source falls outside.
template <typename T>
Tensor<T> shift_spatial(const Tensor<T>& input);

/// Row-wise softmax of a rank-2 tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& input);

/// sum_k weights[offset + k] * terms[k]; all terms share one shape.
template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const Tensor<T>& weights, std::size_t offset);

template <typename T>
struct CrossEntropyResult {
  Tensor<T> loss;            // shape (1): mean negative log-likelihood
  std::vector<T> probabilities;  // row-major (B,K)
};

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// True when every value is finite.
template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace sarnas
