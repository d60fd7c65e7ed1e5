#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>

#include "sarnas/module.hpp"

namespace sarnas {

/// The candidate operators of the search space. The declaration order is the
/// column order of the architecture matrices.
enum class OpKind : std::uint8_t { Conv3, SpeConv3, DilConv3, MaxPool3, AvgPool3, SkipConnect, SeConnect, Zero };

inline constexpr std::size_t kNumOps = 8;
inline constexpr std::array<OpKind, kNumOps> kAllOps{OpKind::Conv3,    OpKind::SpeConv3,    OpKind::DilConv3,
                                                     OpKind::MaxPool3, OpKind::AvgPool3,    OpKind::SkipConnect,
                                                     OpKind::SeConnect, OpKind::Zero};

constexpr std::size_t op_index(OpKind kind) { return static_cast<std::size_t>(kind); }
std::string_view op_name(OpKind kind);
std::optional<OpKind> parse_op_name(std::string_view name);

struct OpOptions {
  std::size_t se_reduction = 4;
  /// 1: a single dilated separable block. 2: stacked twice like SpeConv3.
  std::size_t dil_conv_repeats = 1;
};

/// BN over channels with learnable scale/shift and running statistics.
template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(std::size_t channels);
  Tensor<T> forward(const Tensor<T>& input) override;

 private:
  Parameter<T>* scale_;
  Parameter<T>* shift_;
  RunningStats<T> stats_;
};

/// Bias-free convolution with fan-in uniform initialization.
template <typename T>
class Conv : public Module<T> {
 public:
  Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, const Conv2dOptions& options,
       std::uint64_t seed);
  Tensor<T> forward(const Tensor<T>& input) override;

 private:
  Parameter<T>* weight_;
  Conv2dOptions options_;
};

/// ReLU -> kxk conv -> BN.
template <typename T>
class ReluConvBn : public Module<T> {
 public:
  ReluConvBn(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
             std::size_t padding, std::uint64_t seed);
  Tensor<T> forward(const Tensor<T>& input) override;

 private:
  Conv<T>* conv_;
  BatchNorm<T>* bn_;
};

/// Stride-2 downsampling: ReLU, two 1x1 stride-2 convs (the second on the
/// input shifted by one cell in both spatial axes), channel concat, BN.
template <typename T>
class FactorizedReduce : public Module<T> {
 public:
  FactorizedReduce(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed);
  Tensor<T> forward(const Tensor<T>& input) override;

 private:
  Conv<T>* left_;
  Conv<T>* right_;
  BatchNorm<T>* bn_;
};

/// One instantiated candidate operator on an edge with channel count C.
template <typename T>
class OpInstance : public Module<T> {
 public:
  OpInstance(OpKind kind, std::size_t channels, std::size_t stride)
      : kind_(kind), channels_(channels), stride_(stride) {}

  OpKind kind() const { return kind_; }
  std::size_t channels() const { return channels_; }
  std::size_t stride() const { return stride_; }

 private:
  OpKind kind_;
  std::size_t channels_;
  std::size_t stride_;
};

/// Throws ConfigError for C == 0, stride outside {1,2}, or an odd C where a
/// factorized reduce is needed.
template <typename T>
std::unique_ptr<OpInstance<T>> build_op(OpKind kind, std::size_t channels, std::size_t stride, std::uint64_t seed,
                                        const OpOptions& options = {});

/// Closed-form trainable element count of build_op(kind, channels, stride).
std::size_t op_param_count(OpKind kind, std::size_t channels, std::size_t stride, const OpOptions& options = {});

/// Trainable element counts of the shared building blocks.
std::size_t relu_conv_bn_param_count(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);
std::size_t factorized_reduce_param_count(std::size_t in_channels, std::size_t out_channels);

}  // namespace sarnas
