#include "sarnas/operators.hpp"

#include <algorithm>
#include <random>

#include "sarnas/error.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames{"Conv3",    "SpeConv3",    "DilConv3",  "MaxPool3",
                                                         "AvgPool3", "SkipConnect", "SeConnect", "Zero"};

std::size_t se_hidden(std::size_t channels, const OpOptions& options) {
  return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, options.se_reduction));
}

std::size_t sep_block_param_count(std::size_t c) { return 9 * c + c * c + 2 * c; }

// ReLU -> 3x3 depthwise -> 1x1 pointwise -> BN.
template <typename T>
class SepBlock : public Module<T> {
 public:
  SepBlock(std::size_t channels, std::size_t stride, std::size_t dilation, std::uint64_t seed) {
    SeedStream seeds(seed);
    Conv2dOptions dw;
    dw.stride = {stride, stride};
    dw.padding = {dilation, dilation};
    dw.dilation = {dilation, dilation};
    dw.groups = channels;
    depthwise_ = &this->register_module("depthwise", std::make_unique<Conv<T>>(channels, channels, 3, dw, seeds.next()));
    pointwise_ = &this->register_module("pointwise",
                                        std::make_unique<Conv<T>>(channels, channels, 1, Conv2dOptions{}, seeds.next()));
    bn_ = &this->register_module("bn", std::make_unique<BatchNorm<T>>(channels));
  }

  Tensor<T> forward(const Tensor<T>& input) override {
    return bn_->forward(pointwise_->forward(depthwise_->forward(relu(input))));
  }

 private:
  Conv<T>* depthwise_;
  Conv<T>* pointwise_;
  BatchNorm<T>* bn_;
};

template <typename T>
class ConvOp : public OpInstance<T> {
 public:
  ConvOp(std::size_t c, std::size_t stride, std::uint64_t seed) : OpInstance<T>(OpKind::Conv3, c, stride) {
    block_ = &this->register_module("rcb", std::make_unique<ReluConvBn<T>>(c, c, 3, stride, 1, seed));
  }
  Tensor<T> forward(const Tensor<T>& input) override { return block_->forward(input); }

 private:
  ReluConvBn<T>* block_;
};

// SpeConv3 (dilation 1, two blocks) and DilConv3 (dilation 2, one block by default).
template <typename T>
class SeparableOp : public OpInstance<T> {
 public:
  SeparableOp(OpKind kind, std::size_t c, std::size_t stride, std::size_t dilation, std::size_t repeats,
              std::uint64_t seed)
      : OpInstance<T>(kind, c, stride) {
    SeedStream seeds(seed);
    for (std::size_t i = 0; i < repeats; ++i) {
      blocks_.push_back(&this->register_module("block" + std::to_string(i),
                                               std::make_unique<SepBlock<T>>(c, i == 0 ? stride : 1, dilation,
                                                                             seeds.next())));
    }
  }
  Tensor<T> forward(const Tensor<T>& input) override {
    Tensor<T> x = input;
    for (auto* b : blocks_) x = b->forward(x);
    return x;
  }

 private:
  std::vector<SepBlock<T>*> blocks_;
};

template <typename T>
class PoolOp : public OpInstance<T> {
 public:
  PoolOp(OpKind kind, std::size_t c, std::size_t stride) : OpInstance<T>(kind, c, stride) {}
  Tensor<T> forward(const Tensor<T>& input) override {
    return pool2d(input, this->kind() == OpKind::MaxPool3 ? PoolMode::Max : PoolMode::Average, this->stride());
  }
};

template <typename T>
class IdentityOp : public OpInstance<T> {
 public:
  explicit IdentityOp(std::size_t c) : OpInstance<T>(OpKind::SkipConnect, c, 1) {}
  Tensor<T> forward(const Tensor<T>& input) override { return input; }
};

template <typename T>
class SkipReduceOp : public OpInstance<T> {
 public:
  SkipReduceOp(std::size_t c, std::uint64_t seed) : OpInstance<T>(OpKind::SkipConnect, c, 2) {
    reduce_ = &this->register_module("reduce", std::make_unique<FactorizedReduce<T>>(c, c, seed));
  }
  Tensor<T> forward(const Tensor<T>& input) override { return reduce_->forward(input); }

 private:
  FactorizedReduce<T>* reduce_;
};

// Squeeze (spatial mean) -> linear C->h -> ReLU -> linear h->C -> sigmoid ->
// channelwise rescale, preceded by a factorized reduce at stride 2.
template <typename T>
class SqueezeExciteOp : public OpInstance<T> {
 public:
  SqueezeExciteOp(std::size_t c, std::size_t stride, std::uint64_t seed, const OpOptions& options)
      : OpInstance<T>(OpKind::SeConnect, c, stride) {
    SeedStream seeds(seed);
    if (stride == 2) reduce_ = &this->register_module("reduce", std::make_unique<FactorizedReduce<T>>(c, c, seeds.next()));
    const std::size_t h = se_hidden(c, options);
    std::mt19937_64 rng(seeds.next());
    w1_ = &this->register_parameter("fc1.weight", Shape{h, c}, fan_in_uniform<T>(h * c, c, rng));
    b1_ = &this->register_parameter("fc1.bias", Shape{h}, std::vector<T>(h, T(0)));
    w2_ = &this->register_parameter("fc2.weight", Shape{c, h}, fan_in_uniform<T>(c * h, h, rng));
    b2_ = &this->register_parameter("fc2.bias", Shape{c}, std::vector<T>(c, T(0)));
  }

  Tensor<T> forward(const Tensor<T>& input) override {
    Tensor<T> x = reduce_ ? reduce_->forward(input) : input;
    Tensor<T> squeezed = global_avg_spatial(x);
    Tensor<T> hidden = relu(linear(squeezed, w1_->tensor(), b1_->tensor()));
    Tensor<T> gate = sigmoid(linear(hidden, w2_->tensor(), b2_->tensor()));
    return channel_scale(x, gate);
  }

 private:
  FactorizedReduce<T>* reduce_ = nullptr;
  Parameter<T>* w1_;
  Parameter<T>* b1_;
  Parameter<T>* w2_;
  Parameter<T>* b2_;
};

template <typename T>
class ZeroOp : public OpInstance<T> {
 public:
  ZeroOp(std::size_t c, std::size_t stride) : OpInstance<T>(OpKind::Zero, c, stride) {}
  Tensor<T> forward(const Tensor<T>& input) override {
    require_rank(input.shape(), 4, "Zero input");
    const Shape& s = input.shape();
    const std::size_t h = window_output_extent(s[kFrame], 3, this->stride(), 1, 1, "frame");
    const std::size_t w = window_output_extent(s[kJoint], 3, this->stride(), 1, 1, "joint");
    return Tensor<T>::zeros(Shape{s[kBatch], s[kChannel], h, w});
  }
};

}  // namespace

std::string_view op_name(OpKind kind) { return kOpNames[op_index(kind)]; }

std::optional<OpKind> parse_op_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumOps; ++i) {
    if (kOpNames[i] == name) return kAllOps[i];
  }
  return std::nullopt;
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels) : stats_(channels) {
  scale_ = &this->register_parameter("weight", Shape{channels}, std::vector<T>(channels, T(1)));
  shift_ = &this->register_parameter("bias", Shape{channels}, std::vector<T>(channels, T(0)));
  this->register_buffer("running_mean", Shape{channels}, &stats_.mean);
  this->register_buffer("running_var", Shape{channels}, &stats_.var);
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& input) {
  return batchnorm2d(input, scale_->tensor(), shift_->tensor(), stats_, this->norm_mode());
}

template <typename T>
Conv<T>::Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, const Conv2dOptions& options,
              std::uint64_t seed)
    : options_(options) {
  if (options.groups == 0 || in_channels % options.groups != 0 || out_channels % options.groups != 0) {
    throw ConfigError("conv: groups must divide both channel counts");
  }
  std::mt19937_64 rng(seed);
  const std::size_t fan_in = in_channels / options.groups * kernel * kernel;
  weight_ = &this->register_parameter("weight", Shape{out_channels, in_channels / options.groups, kernel, kernel},
                                      fan_in_uniform<T>(out_channels * fan_in, fan_in, rng));
}

template <typename T>
Tensor<T> Conv<T>::forward(const Tensor<T>& input) {
  return conv2d(input, weight_->tensor(), options_);
}

template <typename T>
ReluConvBn<T>::ReluConvBn(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                          std::size_t padding, std::uint64_t seed) {
  Conv2dOptions o;
  o.stride = {stride, stride};
  o.padding = {padding, padding};
  conv_ = &this->register_module("conv", std::make_unique<Conv<T>>(in_channels, out_channels, kernel, o, seed));
  bn_ = &this->register_module("bn", std::make_unique<BatchNorm<T>>(out_channels));
}

template <typename T>
Tensor<T> ReluConvBn<T>::forward(const Tensor<T>& input) {
  return bn_->forward(conv_->forward(relu(input)));
}

template <typename T>
FactorizedReduce<T>::FactorizedReduce(std::size_t in_channels, std::size_t out_channels, std::uint64_t seed) {
  if (out_channels % 2 != 0) {
    throw ConfigError("factorized reduce needs an even output channel count, got " + std::to_string(out_channels));
  }
  SeedStream seeds(seed);
  Conv2dOptions o;
  o.stride = {2, 2};
  left_ = &this->register_module("left", std::make_unique<Conv<T>>(in_channels, out_channels / 2, 1, o, seeds.next()));
  right_ = &this->register_module("right", std::make_unique<Conv<T>>(in_channels, out_channels / 2, 1, o, seeds.next()));
  bn_ = &this->register_module("bn", std::make_unique<BatchNorm<T>>(out_channels));
}

template <typename T>
Tensor<T> FactorizedReduce<T>::forward(const Tensor<T>& input) {
  Tensor<T> x = relu(input);
  return bn_->forward(channel_concat<T>({left_->forward(x), right_->forward(shift_spatial(x))}));
}

template <typename T>
std::unique_ptr<OpInstance<T>> build_op(OpKind kind, std::size_t channels, std::size_t stride, std::uint64_t seed,
                                        const OpOptions& options) {
  if (channels == 0) throw ConfigError("build_op: channel count must be positive");
  if (stride != 1 && stride != 2) throw ConfigError("build_op: stride must be 1 or 2");
  switch (kind) {
    case OpKind::Conv3:
      return std::make_unique<ConvOp<T>>(channels, stride, seed);
    case OpKind::SpeConv3:
      return std::make_unique<SeparableOp<T>>(kind, channels, stride, 1, 2, seed);
    case OpKind::DilConv3:
      if (options.dil_conv_repeats == 0) throw ConfigError("build_op: dil_conv_repeats must be positive");
      return std::make_unique<SeparableOp<T>>(kind, channels, stride, 2, options.dil_conv_repeats, seed);
    case OpKind::MaxPool3:
    case OpKind::AvgPool3:
      return std::make_unique<PoolOp<T>>(kind, channels, stride);
    case OpKind::SkipConnect:
      if (stride == 1) return std::make_unique<IdentityOp<T>>(channels);
      if (channels % 2 != 0) {
        throw ConfigError("SkipConnect at stride 2 needs an even channel count, got " + std::to_string(channels));
      }
      return std::make_unique<SkipReduceOp<T>>(channels, seed);
    case OpKind::SeConnect:
      if (stride == 2 && channels % 2 != 0) {
        throw ConfigError("SeConnect at stride 2 needs an even channel count, got " + std::to_string(channels));
      }
      return std::make_unique<SqueezeExciteOp<T>>(channels, stride, seed, options);
    case OpKind::Zero:
      return std::make_unique<ZeroOp<T>>(channels, stride);
  }
  throw ConfigError("build_op: unknown operator kind");
}

std::size_t relu_conv_bn_param_count(std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
  return out_channels * in_channels * kernel * kernel + 2 * out_channels;
}

std::size_t factorized_reduce_param_count(std::size_t in_channels, std::size_t out_channels) {
  return 2 * (out_channels / 2) * in_channels + 2 * out_channels;
}

std::size_t op_param_count(OpKind kind, std::size_t c, std::size_t stride, const OpOptions& options) {
  switch (kind) {
    case OpKind::Conv3:
      return relu_conv_bn_param_count(c, c, 3);
    case OpKind::SpeConv3:
      return 2 * sep_block_param_count(c);
    case OpKind::DilConv3:
      return options.dil_conv_repeats * sep_block_param_count(c);
    case OpKind::MaxPool3:
    case OpKind::AvgPool3:
    case OpKind::Zero:
      return 0;
    case OpKind::SkipConnect:
      return stride == 1 ? 0 : factorized_reduce_param_count(c, c);
    case OpKind::SeConnect: {
      const std::size_t h = se_hidden(c, options);
      const std::size_t excite = c * h + h + h * c + c;
      return excite + (stride == 2 ? factorized_reduce_param_count(c, c) : 0);
    }
  }
  return 0;
}

#define SARNAS_INSTANTIATE_OPERATORS(T)                                                              \
  template class BatchNorm<T>;                                                                       \
  template class Conv<T>;                                                                            \
  template class ReluConvBn<T>;                                                                      \
  template class FactorizedReduce<T>;                                                                \
  template std::unique_ptr<OpInstance<T>> build_op(OpKind, std::size_t, std::size_t, std::uint64_t,  \
                                                   const OpOptions&);

SARNAS_INSTANTIATE_OPERATORS(float)
SARNAS_INSTANTIATE_OPERATORS(double)

}  // namespace sarnas
