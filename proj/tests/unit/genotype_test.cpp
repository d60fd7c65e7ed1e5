#include <gtest/gtest.h>

#include "../support/genotype_oracle.hpp"
#include "sarnas/error.hpp"
#include "sarnas/genotype.hpp"
#include "sarnas/random.hpp"

using namespace sarnas;
using sarnas::testing::brute_force_genotype;

TEST(DeriveGenotype, MatchesBruteForceOnRandomAlpha) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto alpha = init_alpha<float>(seed, 1.0);
    const Genotype g = derive_genotype(alpha);
    for (CellType t : {CellType::Normal, CellType::Reduce}) {
      ASSERT_EQ(g.of(t), brute_force_genotype(alpha.weights(t))) << "seed " << seed;
    }
    EXPECT_NO_THROW(validate_genotype(g));
  }
}

TEST(DeriveGenotype, ConstructedSpike) {
  std::vector<double> logits(kNumEdges * kNumOps, 0.0);
  for (std::size_t src : {0, 1}) logits[edge_index(0, src) * kNumOps + op_index(OpKind::Conv3)] = 5.0;
  AlphaParams<double> alpha{Tensor<double>::leaf({kNumEdges, kNumOps}, logits),
                            Tensor<double>::zeros({kNumEdges, kNumOps})};
  const auto w = alpha.weights(CellType::Normal);
  EXPECT_GT(w[op_index(OpKind::Conv3)], 0.9);
  const Genotype g = derive_genotype(alpha);
  EXPECT_EQ(g.normal[0][0], (GenotypeEdge{OpKind::Conv3, 0}));
  EXPECT_EQ(g.normal[0][1], (GenotypeEdge{OpKind::Conv3, 1}));
}

TEST(DeriveGenotype, UniformAlphaUsesTieBreaks) {
  const Genotype g = derive_genotype(init_alpha<double>(1, 0.0));
  for (const CellGenotype* cell : {&g.normal, &g.reduce}) {
    for (const auto& node : *cell) {
      EXPECT_EQ(node[0], (GenotypeEdge{OpKind::Conv3, 0}));
      EXPECT_EQ(node[1], (GenotypeEdge{OpKind::Conv3, 1}));
    }
  }
}

TEST(DeriveGenotype, IgnoresZeroEvenWhenDominant) {
  std::vector<double> logits(kNumEdges * kNumOps, 0.0);
  for (std::size_t e = 0; e < kNumEdges; ++e) logits[e * kNumOps + op_index(OpKind::Zero)] = 9.0;
  logits[edge_index(3, 4) * kNumOps + op_index(OpKind::AvgPool3)] = 1.0;
  AlphaParams<double> alpha{Tensor<double>::leaf({kNumEdges, kNumOps}, logits),
                            Tensor<double>::zeros({kNumEdges, kNumOps})};
  const Genotype g = derive_genotype(alpha);
  EXPECT_EQ(g.normal[3][0], (GenotypeEdge{OpKind::AvgPool3, 4}));
  for (const auto& node : g.normal)
    for (const auto& e : node) EXPECT_NE(e.op, OpKind::Zero);
}

TEST(GenotypeText, RoundTrip) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Genotype g = random_genotype(seed);
    const std::string text = serialize_genotype(g);
    EXPECT_EQ(parse_genotype(text), g);
    EXPECT_EQ(serialize_genotype(parse_genotype(text)), text);
  }
}

TEST(GenotypeText, GrammarInstance) {
  std::string text = serialize_genotype(random_genotype(3));
  const auto start = text.find("normal n0:");
  const auto end = text.find('\n', start);
  text.replace(start, end - start, "normal n0: Conv3<-input0, SpeConv3<-input1");
  const Genotype g = parse_genotype(text);
  EXPECT_EQ(g.normal[0][0], (GenotypeEdge{OpKind::Conv3, 0}));
  EXPECT_EQ(g.normal[0][1], (GenotypeEdge{OpKind::SpeConv3, 1}));
}

TEST(GenotypeText, Rejections) {
  const std::string good = serialize_genotype(random_genotype(4));
  auto with_line = [&](const std::string& node, const std::string& line) {
    std::string t = good;
    const auto start = t.find(node);
    t.replace(start, t.find('\n', start) - start, line);
    return t;
  };
  EXPECT_THROW(parse_genotype(with_line("normal n0:", "normal n0: Zero<-input0, Conv3<-input1")), ParseError);
  EXPECT_THROW(parse_genotype(with_line("normal n0:", "normal n0: Conv5<-input0, Conv3<-input1")), ParseError);
  EXPECT_THROW(parse_genotype(with_line("normal n0:", "normal n0: Conv3<-n0, Conv3<-input1")), ParseError);
  EXPECT_THROW(parse_genotype(with_line("normal n1:", "normal n1: Conv3<-input0, MaxPool3<-input0")), ParseError);
  EXPECT_THROW(parse_genotype(with_line("reduce n3:", "reduce n3: Conv3<-input0")), ParseError);
  EXPECT_THROW(parse_genotype("SARNAS-GENO v2\n"), ParseError);
  try {
    parse_genotype(with_line("normal n2:", "normal n2: Conv3<-n5, Conv3<-input1"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(RandomGenotype, AlwaysValidAndSeeded) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) EXPECT_NO_THROW(validate_genotype(random_genotype(seed)));
  EXPECT_EQ(random_genotype(9), random_genotype(9));
  EXPECT_NE(random_genotype(9), random_genotype(10));
}

TEST(DiscreteNetwork, PaperShapedStackProducesLogits) {
  NetworkConfig c;
  c.cells = 9;
  c.init_channels = 16;
  c.classes = 60;
  DiscreteNetwork<float> net(c, random_genotype(1));
  EXPECT_EQ(net.cell(2).type(), CellType::Reduce);
  EXPECT_EQ(net.cell(5).type(), CellType::Reduce);
  net.set_training(false);
  NoGradGuard guard;
  EXPECT_EQ(net.forward(Tensor<float>::zeros({1, 3, 112, 50})).shape(), Shape({1, 60}));
}

TEST(DiscreteNetwork, ParameterCountBelowSuperNet) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    NetworkConfig c;
    c.cells = 3 + seed % 4;
    c.init_channels = seed % 2 ? 8 : 16;
    const Genotype g = random_genotype(seed);
    DiscreteNetwork<float> net(c, g);
    EXPECT_EQ(discrete_param_count(c, g), net.parameter_count());
    EXPECT_LT(discrete_param_count(c, g), supernet_param_count(c));
  }
}

TEST(GenotypeDot, EightOperatorEdgesAndStableBytes) {
  const Genotype g = random_genotype(12);
  for (CellType t : {CellType::Normal, CellType::Reduce}) {
    const std::string dot = genotype_dot(g, t);
    std::size_t labeled = 0;
    for (std::size_t p = dot.find("label="); p != std::string::npos; p = dot.find("label=", p + 1)) ++labeled;
    EXPECT_EQ(labeled, 8u);
    EXPECT_EQ(dot, genotype_dot(g, t));
  }
}
