#include "sarnas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sarnas/ops.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

template <typename T>
GradCheckReport check_gradients(const std::function<Tensor<T>()>& loss, const std::vector<Tensor<T>>& wrt,
                                double step, double floor) {
  for (auto t : wrt) t.zero_grad();
  backward(loss());
  std::vector<std::vector<T>> analytic;
  for (const auto& t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), T(0));
    }
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    Tensor<T> t = wrt[i];
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const T saved = values[k];
      values[k] = saved + static_cast<T>(step);
      const double plus = static_cast<double>(loss().item());
      values[k] = saved - static_cast<T>(step);
      const double minus = static_cast<double>(loss().item());
      values[k] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = static_cast<double>(analytic[i][k]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.elements;
      if (err > report.max_error || std::isnan(err)) {
        report.max_error = std::isnan(err) ? INFINITY : err;
        std::ostringstream os;
        os << i << '[' << k << "]: " << a << " vs " << numeric;
        report.worst = os.str();
      }
    }
  }
  for (auto t : wrt) t.zero_grad();
  return report;
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi, bool requires_grad) {
  std::mt19937_64 rng(seed);
  std::vector<T> values(shape.numel());
  for (auto& v : values) v = static_cast<T>(lo + (hi - lo) * unit_uniform(rng));
  return Tensor<T>::leaf(shape, std::move(values), requires_grad);
}

template <typename T>
Tensor<T> random_projection(const Tensor<T>& t, std::uint64_t seed) {
  return sum(mul(t, random_tensor<T>(t.shape(), seed, -1.0, 1.0, false)));
}

template GradCheckReport check_gradients(const std::function<Tensor<float>()>&, const std::vector<Tensor<float>>&,
                                         double, double);
template GradCheckReport check_gradients(const std::function<Tensor<double>()>&,
                                         const std::vector<Tensor<double>>&, double, double);
template Tensor<float> random_tensor(const Shape&, std::uint64_t, double, double, bool);
template Tensor<double> random_tensor(const Shape&, std::uint64_t, double, double, bool);
template Tensor<float> random_projection(const Tensor<float>&, std::uint64_t);
template Tensor<double> random_projection(const Tensor<double>&, std::uint64_t);

}  // namespace sarnas
