#pragma once

#include <array>
#include <string>
#include <string_view>

#include "sarnas/cell.hpp"

namespace sarnas {

struct GenotypeEdge {
  OpKind op;
  std::size_t src;  // node index: 0,1 inputs, 2.. intermediates

  bool operator==(const GenotypeEdge&) const = default;
};

/// Two retained (op, src) connections per intermediate node.
using CellGenotype = std::array<std::array<GenotypeEdge, 2>, kNumIntermediate>;

struct Genotype {
  CellGenotype normal;
  CellGenotype reduce;

  CellGenotype& of(CellType type) { return type == CellType::Normal ? normal : reduce; }
  const CellGenotype& of(CellType type) const { return type == CellType::Normal ? normal : reduce; }
  bool operator==(const Genotype&) const = default;
};

/// Throws InvariantError for Zero ops, sources that do not precede their
/// node, or a repeated source within a node.
void validate_genotype(const Genotype& g);

/// Per node: score each incoming edge by its largest non-Zero softmax weight,
/// keep the two best edges (ties to the lower edge index) and on each the
/// strongest non-Zero op (ties to the lower op index). Kept edges are listed
/// best first.
template <typename T>
Genotype derive_genotype(const AlphaParams<T>& alpha);

/// Same rule on row-major 14x8 softmax weights of one cell type.
CellGenotype derive_cell_genotype(std::span<const double> weights);

inline constexpr std::string_view kGenotypeHeader = "SARNAS-GENO v1";

std::string serialize_genotype(const Genotype& g);
/// Throws ParseError naming the line on malformed input.
Genotype parse_genotype(std::string_view text);

/// Uniform random valid genotype (distinct sources, non-Zero ops).
Genotype random_genotype(std::uint64_t seed);

/// A cell that realizes only its genotype's 8 connections; each intermediate
/// node is the sum of its two op outputs.
template <typename T>
class DiscreteCell : public Cell<T> {
 public:
  DiscreteCell(const CellShape& shape, const CellGenotype& genotype, std::uint64_t seed,
               const OpOptions& options = {});
  Tensor<T> forward_cell(const Tensor<T>& prev_prev, const Tensor<T>& prev) override;

 private:
  CellInputs<T>* inputs_;
  CellGenotype genotype_;
  std::array<std::array<OpInstance<T>*, 2>, kNumIntermediate> ops_{};
};

template <typename T>
class DiscreteNetwork : public CellNetwork<T> {
 public:
  DiscreteNetwork(const NetworkConfig& config, const Genotype& genotype, const OpOptions& options = {});
  const Genotype& genotype() const { return genotype_; }

 private:
  Genotype genotype_;
};

std::size_t discrete_param_count(const NetworkConfig& config, const Genotype& genotype,
                                 const OpOptions& options = {});

/// DOT digraph of one cell type with its 8 retained operator edges.
std::string genotype_dot(const Genotype& g, CellType type);

}  // namespace sarnas
