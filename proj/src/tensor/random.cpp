#include "sarnas/random.hpp"

#include <cmath>
#include <numbers>

namespace sarnas {

template <typename T>
std::vector<T> fan_in_uniform(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> out(count);
  for (auto& v : out) v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
  return out;
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit_uniform(rng);  // (0,1]
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template std::vector<float> fan_in_uniform(std::size_t, std::size_t, std::mt19937_64&);
template std::vector<double> fan_in_uniform(std::size_t, std::size_t, std::mt19937_64&);

}  // namespace sarnas
