#include <gtest/gtest.h>

#include "sarnas/error.hpp"
#include "sarnas/gradcheck.hpp"
#include "sarnas/operators.hpp"

using namespace sarnas;
using TD = Tensor<double>;

namespace {

std::size_t enumerate_params(Module<double>& m) {
  std::size_t n = 0;
  for (auto* p : m.parameters()) n += p->numel();
  return n;
}

Parameter<double>* find_param(Module<double>& m, const std::string& suffix) {
  for (auto* p : m.parameters()) {
    if (p->name().ends_with(suffix)) return p;
  }
  return nullptr;
}

}  // namespace

TEST(OpNames, RoundTrip) {
  for (OpKind k : kAllOps) {
    auto parsed = parse_op_name(op_name(k));
    ASSERT_TRUE(parsed.has_value());
    EXPECT_EQ(*parsed, k);
  }
  EXPECT_FALSE(parse_op_name("conv3").has_value());
  EXPECT_EQ(op_index(OpKind::Zero), 7u);
}

TEST(OpParamCount, HandCountedExamples) {
  EXPECT_EQ(op_param_count(OpKind::MaxPool3, 16, 1), 0u);
  EXPECT_EQ(op_param_count(OpKind::Zero, 16, 2), 0u);
  EXPECT_EQ(op_param_count(OpKind::SkipConnect, 16, 1), 0u);
  EXPECT_EQ(op_param_count(OpKind::Conv3, 16, 1), 9u * 16 * 16 + 2 * 16);
  // two blocks of depthwise 3x3 + pointwise 1x1 + BN scale/shift
  EXPECT_EQ(op_param_count(OpKind::SpeConv3, 16, 1), 2u * (9 * 16 + 16 * 16 + 2 * 16));
  EXPECT_EQ(op_param_count(OpKind::SpeConv3, 16, 1), 864u);
}

TEST(OpParamCount, MatchesAllocatedElements) {
  for (OpKind k : kAllOps)
    for (std::size_t c : {8, 16})
      for (std::size_t s : {1, 2}) {
        auto op = build_op<double>(k, c, s, 1);
        EXPECT_EQ(op_param_count(k, c, s), enumerate_params(*op)) << op_name(k) << " C=" << c << " s=" << s;
      }
}

TEST(Ops, OutputShapes) {
  auto x = random_tensor<double>({2, 8, 6, 5}, 1, -1.0, 1.0, false);
  for (OpKind k : kAllOps) {
    EXPECT_EQ(build_op<double>(k, 8, 1, 2)->forward(x).shape(), Shape({2, 8, 6, 5})) << op_name(k);
    EXPECT_EQ(build_op<double>(k, 8, 2, 2)->forward(x).shape(), Shape({2, 8, 3, 3})) << op_name(k);
  }
}

TEST(Ops, ZeroGivesZerosAndNoGradient) {
  auto x = random_tensor<double>({1, 4, 4, 4}, 3);
  auto op = build_op<double>(OpKind::Zero, 4, 1, 1);
  auto y = op->forward(x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  backward(sum(add(y, scale(x, 0.0))));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Ops, SkipIsIdentityAtStrideOne) {
  auto x = random_tensor<double>({2, 4, 5, 3}, 4, -1.0, 1.0, false);
  auto y = build_op<double>(OpKind::SkipConnect, 4, 1, 1)->forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Ops, SqueezeExciteWithSaturatedGateIsIdentity) {
  auto op = build_op<double>(OpKind::SeConnect, 8, 1, 5);
  auto* w2 = find_param(*op, "fc2.weight");
  auto* b2 = find_param(*op, "fc2.bias");
  ASSERT_NE(w2, nullptr);
  ASSERT_NE(b2, nullptr);
  for (auto& v : w2->values()) v = 0.0;
  for (auto& v : b2->values()) v = 40.0;
  auto x = random_tensor<double>({2, 8, 4, 3}, 6, -1.0, 1.0, false);
  auto y = op->forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-6);
}

TEST(Ops, SqueezeExciteRescalesWholeChannels) {
  auto op = build_op<double>(OpKind::SeConnect, 4, 1, 9);
  auto x = random_tensor<double>({1, 4, 3, 3}, 10, 0.5, 1.5, false);
  auto y = op->forward(x);
  for (std::size_t c = 0; c < 4; ++c) {
    const double ratio = y.at(c * 9) / x.at(c * 9);
    EXPECT_GT(ratio, 0.0);
    EXPECT_LT(ratio, 1.0);
    for (std::size_t i = 1; i < 9; ++i) EXPECT_NEAR(y.at(c * 9 + i) / x.at(c * 9 + i), ratio, 1e-12);
  }
}

TEST(Ops, InvalidConfigurationsRejected) {
  EXPECT_THROW(build_op<double>(OpKind::Conv3, 0, 1, 1), ConfigError);
  EXPECT_THROW(build_op<double>(OpKind::Conv3, 4, 3, 1), ConfigError);
  EXPECT_THROW(build_op<double>(OpKind::SkipConnect, 5, 2, 1), ConfigError);
  EXPECT_THROW(build_op<double>(OpKind::SeConnect, 5, 2, 1), ConfigError);
  EXPECT_NO_THROW(build_op<double>(OpKind::SkipConnect, 5, 1, 1));
}

TEST(Ops, EqualSeedsGiveEqualWeights) {
  auto a = build_op<double>(OpKind::DilConv3, 8, 2, 42);
  auto b = build_op<double>(OpKind::DilConv3, 8, 2, 42);
  auto pa = a->parameters();
  auto pb = b->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i]->values().begin(), pa[i]->values().end(), pb[i]->values().begin()));
  }
}

TEST(Ops, DilatedVariantRepeatsWhenConfigured) {
  OpOptions twice;
  twice.dil_conv_repeats = 2;
  EXPECT_EQ(op_param_count(OpKind::DilConv3, 8, 1, twice), 2 * op_param_count(OpKind::DilConv3, 8, 1));
  EXPECT_EQ(op_param_count(OpKind::DilConv3, 8, 1, twice), op_param_count(OpKind::SpeConv3, 8, 1));
}

TEST(Ops, GradientsOfEveryOperator) {
  std::uint64_t seed = 100;
  for (OpKind k : kAllOps) {
    for (std::size_t s : {1, 2}) {
      auto op = build_op<double>(k, 4, s, seed++);
      auto x = random_tensor<double>({2, 4, 5, 6}, seed++);
      std::vector<TD> wrt{x};
      for (auto* p : op->parameters()) wrt.push_back(p->tensor());
      auto r = check_gradients<double>([&] { return random_projection(op->forward(x), 7); }, wrt);
      EXPECT_LE(r.max_error, 1e-3) << op_name(k) << " stride " << s << ": " << r.worst;
    }
  }
}
