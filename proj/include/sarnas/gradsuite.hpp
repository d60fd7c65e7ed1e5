#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sarnas {

struct GradCase {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t elements = 0;
  std::string worst;
  bool passed() const { return max_error <= tolerance; }
};

/// Tolerances of the finite-difference suite: compositions that pass through
/// training-mode batch norm get the looser bound.
inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kGradToleranceBatchNorm = 1e-3;

/// Central-difference checks at 64-bit precision of every differentiable
/// primitive, every candidate operator at strides 1 and 2, the mixed
/// operation and a relaxed cell. Inputs are random with dims <= 6.
std::vector<GradCase> run_gradient_suite(std::uint64_t seed);

}  // namespace sarnas
