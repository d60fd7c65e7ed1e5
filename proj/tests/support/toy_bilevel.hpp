#pragma once

#include "sarnas/bilevel.hpp"

namespace sarnas::testing {

/// Two scalars: L_train = ω²/2 − αω, L_val = (ω − 1)²/2. The batches are ignored.
/// With ω' = ω − ε(ω − α), dL_val(ω')/dα = (ω' − 1)·ε.
template <typename T>
class QuadraticToy : public BilevelProblem<T> {
 public:
  QuadraticToy(double omega, double alpha)
      : omega_("omega", {1}, {T(omega)}, true), alpha_(Tensor<T>::leaf({1}, {T(alpha)}, true)) {}

  std::vector<Parameter<T>*> weights() override { return {&omega_}; }
  std::vector<Tensor<T>> arch() override { return {alpha_}; }

  Tensor<T> train_loss(const Batch<T>&) override {
    const Tensor<T>& w = omega_.tensor();
    return sum(sub(scale(mul(w, w), T(0.5)), mul(alpha_, w)));
  }
  Tensor<T> val_loss(const Batch<T>&) override {
    auto d = sub(omega_.tensor(), Tensor<T>::full({1}, T(1)));
    return sum(scale(mul(d, d), T(0.5)));
  }

  T omega() const { return omega_.values()[0]; }
  T alpha() const { return alpha_.at(0); }

  static double virtual_omega(double omega, double alpha, double eps) { return omega - eps * (omega - alpha); }
  static double hypergradient(double omega, double alpha, double eps) {
    return (virtual_omega(omega, alpha, eps) - 1.0) * eps;
  }
  static double val_at(double omega) { return 0.5 * (omega - 1.0) * (omega - 1.0); }

 private:
  Parameter<T> omega_;
  Tensor<T> alpha_;
};

}  // namespace sarnas::testing
