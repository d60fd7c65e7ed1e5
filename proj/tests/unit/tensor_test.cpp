#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "sarnas/checkpoint.hpp"
#include "sarnas/error.hpp"
#include "sarnas/gradcheck.hpp"
#include "sarnas/ops.hpp"
#include "sarnas/operators.hpp"

using namespace sarnas;
using TD = Tensor<double>;

namespace {

TD ramp(const Shape& shape, double start = 0.0, bool grad = false) {
  std::vector<double> v(shape.numel());
  std::iota(v.begin(), v.end(), start);
  return TD::leaf(shape, std::move(v), grad);
}

// Direct 6-loop convolution over (b, co, t, n, ci, kh, kw) with zero padding.
std::vector<double> naive_conv(const TD& x, const TD& w, const Conv2dOptions& o) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t cin_g = ws[1];
  const std::size_t cout_g = ws[0] / o.groups;
  const std::size_t kh = ws[2];
  const std::size_t kw = ws[3];
  const std::size_t ho = (xs[2] + 2 * o.padding.first - o.dilation.first * (kh - 1) - 1) / o.stride.first + 1;
  const std::size_t wo = (xs[3] + 2 * o.padding.second - o.dilation.second * (kw - 1) - 1) / o.stride.second + 1;
  std::vector<double> out(xs[0] * ws[0] * ho * wo, 0.0);
  for (std::size_t b = 0; b < xs[0]; ++b)
    for (std::size_t co = 0; co < ws[0]; ++co)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          const std::size_t g = co / cout_g;
          for (std::size_t ci = 0; ci < cin_g; ++ci)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t c = 0; c < kw; ++c) {
                const long r = static_cast<long>(i * o.stride.first + a * o.dilation.first) -
                               static_cast<long>(o.padding.first);
                const long q = static_cast<long>(j * o.stride.second + c * o.dilation.second) -
                               static_cast<long>(o.padding.second);
                if (r < 0 || q < 0 || r >= static_cast<long>(xs[2]) || q >= static_cast<long>(xs[3])) continue;
                const std::size_t cin = g * cin_g + ci;
                acc += x.at(((b * xs[1] + cin) * xs[2] + r) * xs[3] + q) * w.at(((co * cin_g + ci) * kh + a) * kw + c);
              }
          out[((b * ws[0] + co) * ho + i) * wo + j] = acc;
        }
  return out;
}

}  // namespace

TEST(Shape, NumelAndRank) {
  Shape s{2, 3, 4, 5};
  EXPECT_EQ(s.rank(), 4u);
  EXPECT_EQ(s.numel(), 120u);
  EXPECT_EQ(s.str(), "(2,3,4,5)");
  EXPECT_THROW(require_rank(s, 2, "x"), DimensionError);
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  auto x = TD::zeros({1, 1, 4, 4});
  auto w = random_tensor<double>({1, 1, 3, 3}, 3);
  Conv2dOptions o;
  o.padding = {1, 1};
  auto y = conv2d(x, w, o);
  EXPECT_EQ(y.shape(), Shape({1, 1, 4, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, CenterDeltaWithOnesKernel) {
  auto x = TD::zeros({1, 1, 3, 3});
  x.mutable_values()[4] = 1.0;
  auto w = TD::full({1, 1, 3, 3}, 1.0);
  Conv2dOptions o;
  o.padding = {1, 1};
  auto y = conv2d(x, w, o);
  const auto ref = naive_conv(x, w, o);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_DOUBLE_EQ(y.at(i), ref[i]);
    EXPECT_DOUBLE_EQ(y.at(i), 1.0);
  }
}

TEST(Conv2d, MatchesDirectSummation) {
  struct Case {
    Shape x, w;
    Conv2dOptions o;
  };
  std::vector<Case> cases;
  Conv2dOptions plain;
  plain.padding = {1, 1};
  cases.push_back({{2, 3, 5, 6}, {4, 3, 3, 3}, plain});
  Conv2dOptions strided = plain;
  strided.stride = {2, 2};
  cases.push_back({{1, 2, 7, 5}, {3, 2, 3, 3}, strided});
  Conv2dOptions dilated;
  dilated.padding = {2, 2};
  dilated.dilation = {2, 2};
  dilated.groups = 4;
  cases.push_back({{2, 4, 6, 6}, {4, 1, 3, 3}, dilated});
  Conv2dOptions grouped;
  grouped.groups = 2;
  cases.push_back({{1, 4, 3, 4}, {6, 2, 1, 1}, grouped});
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    auto x = random_tensor<double>(c.x, seed++);
    auto w = random_tensor<double>(c.w, seed++);
    auto y = conv2d(x, w, c.o);
    const auto ref = naive_conv(x, w, c.o);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-12);
  }
}

TEST(Conv2d, StemShapeOnSkeletonEncoding) {
  auto x = Tensor<float>::zeros({1, 3, 112, 50});
  auto w = Tensor<float>::zeros({16, 3, 3, 3});
  Conv2dOptions o;
  o.padding = {1, 1};
  EXPECT_EQ(conv2d(x, w, o).shape(), Shape({1, 16, 112, 50}));
}

TEST(Conv2d, RejectsChannelMismatch) {
  auto x = TD::zeros({1, 3, 4, 4});
  auto w = TD::zeros({2, 2, 3, 3});
  EXPECT_THROW(conv2d(x, w), DimensionError);
}

TEST(Pool2d, MaxStrideTwoOnRamp) {
  auto y = pool2d(ramp({1, 1, 4, 4}), PoolMode::Max, 2);
  ASSERT_EQ(y.shape(), Shape({1, 1, 2, 2}));
  EXPECT_EQ(y.at(0), 5.0);
  EXPECT_EQ(y.at(1), 7.0);
  EXPECT_EQ(y.at(2), 13.0);
  EXPECT_EQ(y.at(3), 15.0);
}

TEST(Pool2d, AverageKeepsConstants) {
  auto y = pool2d(TD::full({1, 2, 5, 4}, 2.5), PoolMode::Average, 1);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Pool2d, StrideTwoHalvesSkeletonShape) {
  auto y = pool2d(Tensor<float>::zeros({1, 16, 112, 50}), PoolMode::Average, 2);
  EXPECT_EQ(y.shape(), Shape({1, 16, 56, 25}));
}

TEST(BatchNorm, TrainModeStandardizes) {
  auto x = random_tensor<double>({4, 3, 5, 6}, 77, -3.0, 5.0, false);
  RunningStats<double> stats(3);
  auto y = batchnorm2d(x, TD::full({3}, 1.0), TD::zeros({3}), stats, NormMode::Train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 30; ++i) {
        const double v = y.at((b * 3 + c) * 30 + i);
        mean += v;
        sq += v * v;
        ++n;
      }
    mean /= static_cast<double>(n);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(sq / static_cast<double>(n) - mean * mean, 1.0, 1e-3);
  }
}

TEST(BatchNorm, ConstantChannelsGiveZeros) {
  auto x = TD::full({2, 2, 3, 3}, 4.0);
  RunningStats<double> stats(2);
  auto y = batchnorm2d(x, TD::full({2}, 1.0), TD::zeros({2}), stats, NormMode::Train);
  for (double v : y.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BatchNorm, InputGradientMatchesFiniteDifferences) {
  auto x = random_tensor<double>({2, 3, 4, 5}, 5);
  auto g = random_tensor<double>({3}, 6, 0.5, 1.5);
  auto b = random_tensor<double>({3}, 7);
  RunningStats<double> stats(3);
  auto r = check_gradients<double>(
      [&] { return random_projection(batchnorm2d(x, g, b, stats, NormMode::Train), 8); }, {x});
  EXPECT_LE(r.max_error, 1e-4) << r.worst;
}

TEST(Elementwise, ReluAndSigmoid) {
  auto x = TD::leaf({2}, {-1.0, 2.0});
  auto y = relu(x);
  EXPECT_EQ(y.at(0), 0.0);
  EXPECT_EQ(y.at(1), 2.0);
  auto z = TD::leaf({1}, {0.0}, true);
  auto s = sigmoid(z);
  EXPECT_DOUBLE_EQ(s.at(0), 0.5);
  backward(sum(s));
  EXPECT_DOUBLE_EQ(z.grad()[0], 0.25);
  auto r = check_gradients<double>([&] { return sum(sigmoid(z)); }, {z}, 1e-4, 1e-2);
  EXPECT_LE(r.max_error, 1e-6);
}

TEST(Linear, IdentityAndHandArithmetic) {
  auto x = random_tensor<double>({3, 4}, 1, -1.0, 1.0, false);
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  auto y = linear(x, TD::leaf({4, 4}, eye), TD::zeros({4}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(y.at(i), x.at(i));

  auto out = linear(TD::leaf({1, 2}, {4.0, 5.0}), TD::leaf({1, 2}, {2.0, 3.0}), TD::leaf({1}, {1.0}));
  EXPECT_DOUBLE_EQ(out.item(), 24.0);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  auto x = random_tensor<double>({3, 7}, 11);
  auto w = random_tensor<double>({4, 7}, 12);
  auto b = random_tensor<double>({4}, 13);
  auto r = check_gradients<double>([&] { return random_projection(linear(x, w, b), 14); }, {x, w, b});
  EXPECT_LE(r.max_error, 1e-5) << r.worst;
}

TEST(Reductions, GlobalAverageOfConstant) {
  auto y = global_avg_spatial(TD::full({2, 3, 4, 5}, 1.5));
  EXPECT_EQ(y.shape(), Shape({2, 3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.5);
}

TEST(Concat, ShapeAndGradientRouting) {
  std::vector<Tensor<float>> parts;
  for (int i = 0; i < 4; ++i) parts.push_back(Tensor<float>::zeros({1, 16, 3, 2}));
  EXPECT_EQ(channel_concat(parts).shape(), Shape({1, 64, 3, 2}));

  auto a = random_tensor<double>({2, 2, 2, 3}, 1);
  auto b = random_tensor<double>({2, 3, 2, 3}, 2);
  auto y = channel_concat<double>({a, b});
  auto up = random_tensor<double>(y.shape(), 3, -1.0, 1.0, false);
  backward(sum(mul(y, up)));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < 6; ++i) {
        const double g = up.at((n * 5 + c) * 6 + i);
        if (c < 2) {
          EXPECT_EQ(a.grad()[(n * 2 + c) * 6 + i], g);
        } else {
          EXPECT_EQ(b.grad()[(n * 3 + c - 2) * 6 + i], g);
        }
      }
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  auto logits = TD::zeros({3, 5});
  const std::vector<int> labels{0, 2, 4};
  EXPECT_NEAR(softmax_cross_entropy(logits, std::span<const int>(labels)).loss.item(), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, SaturatedLogits) {
  auto logits = TD::leaf({1, 2}, {10.0, -10.0});
  const std::vector<int> labels{0};
  const auto r = softmax_cross_entropy(logits, std::span<const int>(labels));
  const double expected = std::log1p(std::exp(-20.0));
  EXPECT_NEAR(r.loss.item(), expected, 1e-15);
  EXPECT_NEAR(r.probabilities[1], std::exp(-20.0) / (1.0 + std::exp(-20.0)), 1e-15);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  auto logits = random_tensor<double>({4, 6}, 21, -2.0, 2.0);
  const std::vector<int> labels{1, 0, 5, 3};
  auto r = check_gradients<double>(
      [&] { return softmax_cross_entropy(logits, std::span<const int>(labels)).loss; }, {logits});
  EXPECT_LE(r.max_error, 1e-6) << r.worst;
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  const std::vector<int> labels{3};
  EXPECT_THROW(softmax_cross_entropy(TD::zeros({1, 3}), std::span<const int>(labels)), Error);
}

TEST(Autodiff, IdentityAndSquare) {
  auto x = random_tensor<double>({5}, 4);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x.grad()[i], 2.0 * x.at(i));
}

TEST(Autodiff, LeafGradientsAccumulate) {
  auto x = TD::leaf({2}, {1.0, -2.0}, true);
  backward(sum(scale(x, 3.0)));
  backward(sum(scale(x, 3.0)));
  EXPECT_EQ(x.grad()[0], 6.0);
  EXPECT_EQ(x.grad()[1], 6.0);
}

TEST(Autodiff, SharedSubexpressionSumsBothPaths) {
  auto x = TD::leaf({1}, {3.0}, true);
  auto y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  auto x = TD::leaf({2}, {1.0, 2.0}, true);
  TD y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_TRUE(y.node()->is_leaf());
  EXPECT_TRUE(GradMode::enabled());
}

TEST(Autodiff, RandomCompositeMatchesFiniteDifferencesInFloat) {
  auto x = random_tensor<float>({2, 2, 4, 4}, 31);
  auto w = random_tensor<float>({3, 2, 3, 3}, 32);
  Conv2dOptions o;
  o.padding = {1, 1};
  auto r = check_gradients<float>(
      [&] { return random_projection(sigmoid(pool2d(conv2d(x, w, o), PoolMode::Average, 2)), 33); }, {x, w},
      1e-3, 1e-1);
  EXPECT_LE(r.max_error, 1e-3) << r.worst;
}

TEST(Sgd, MomentumRecurrence) {
  Parameter<double> p("w", {1}, {0.0}, true);
  std::vector<Parameter<double>*> params{&p};
  for (int step = 0; step < 2; ++step) {
    backward(sum(scale(p.tensor(), 2.0)));
    sgd_momentum_step<double>(params, 1.0, 0.9);
  }
  EXPECT_DOUBLE_EQ(p.values()[0], -2.0 * (1.0 + 1.9));
}

TEST(Sgd, ZeroMomentumAndZeroRate) {
  Parameter<double> p("w", {2}, {1.0, 1.0}, true);
  std::vector<Parameter<double>*> params{&p};
  backward(sum(p.tensor()));
  sgd_momentum_step<double>(params, 0.5, 0.0);
  EXPECT_DOUBLE_EQ(p.values()[0], 0.5);
  backward(sum(p.tensor()));
  sgd_momentum_step<double>(params, 0.0, 0.9);
  EXPECT_DOUBLE_EQ(p.values()[0], 0.5);
  EXPECT_THROW(sgd_momentum_step<double>(params, 0.1, 0.9), StateError);
}

TEST(Checkpoint, RoundTripAndMismatchNamesTensor) {
  const auto dir = std::filesystem::temp_directory_path() / "sarnas_ckpt_test";
  std::filesystem::create_directories(dir);
  auto bn = std::make_unique<BatchNorm<float>>(4);
  bn->forward(random_tensor<float>({2, 4, 3, 3}, 1, -1.0, 1.0, false));
  write_checkpoint(dir / "bn.ckpt", module_state<float>(*bn));
  const auto entries = read_checkpoint(dir / "bn.ckpt");
  BatchNorm<float> fresh(4);
  load_module_state<float>(fresh, entries);
  const auto a = module_state<float>(*bn);
  const auto b = module_state<float>(fresh);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].values, b[i].values);
  }
  BatchNorm<float> wrong(5);
  try {
    load_module_state<float>(wrong, entries);
    FAIL() << "shape mismatch accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("weight"), std::string::npos) << e.what();
  }
  std::filesystem::remove_all(dir);
}
