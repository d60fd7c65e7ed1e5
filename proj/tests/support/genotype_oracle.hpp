#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "sarnas/genotype.hpp"

namespace sarnas::testing {

/// Sorts every (edge, op != Zero) pair of a node by weight, then takes the top
/// pair and the best pair on a different edge.
template <typename W>
CellGenotype brute_force_genotype(const std::vector<W>& w) {
  CellGenotype g{};
  std::size_t first_row = 0;
  for (std::size_t node = 0; node < kNumIntermediate; ++node) {
    const std::size_t rows = node + kNumInputs;
    std::vector<std::tuple<W, std::size_t, std::size_t>> pairs;
    for (std::size_t src = 0; src < rows; ++src)
      for (std::size_t op = 0; op < kNumOps; ++op)
        if (op != op_index(OpKind::Zero)) pairs.emplace_back(w[(first_row + src) * kNumOps + op], src, op);
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
      return std::get<2>(a) < std::get<2>(b);
    });
    const auto& top = pairs.front();
    g[node][0] = {kAllOps[std::get<2>(top)], std::get<1>(top)};
    for (const auto& p : pairs) {
      if (std::get<1>(p) != std::get<1>(top)) {
        g[node][1] = {kAllOps[std::get<2>(p)], std::get<1>(p)};
        break;
      }
    }
    first_row += rows;
  }
  return g;
}

}  // namespace sarnas::testing
