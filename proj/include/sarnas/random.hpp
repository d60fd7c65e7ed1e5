#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sarnas {

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix_seed(parent ^ mix_seed(index + 1));
}

/// Hands out a fresh derived seed per call, in a fixed order.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t next() { return derive_seed(seed_, counter_++); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Zero-mean uniform values in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
std::vector<T> fan_in_uniform(std::size_t count, std::size_t fan_in, std::mt19937_64& rng);

/// Fisher-Yates with an explicit engine so results do not depend on the
/// standard library's shuffle implementation.
template <typename V>
void seeded_shuffle(std::vector<V>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Uniform double in [0,1) from the top 53 bits of one engine draw.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box-Muller; two engine draws per value.
double standard_normal(std::mt19937_64& rng);

}  // namespace sarnas
