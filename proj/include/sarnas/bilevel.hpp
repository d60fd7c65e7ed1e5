#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sarnas/batch.hpp"
#include "sarnas/cell.hpp"

namespace sarnas {

/// The two-level problem seen by the optimizer: weights ω (momentum SGD),
/// architecture tensors α (plain gradient descent) and the two losses.
template <typename T>
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;
  virtual std::vector<Parameter<T>*> weights() = 0;
  virtual std::vector<Tensor<T>> arch() = 0;
  /// State that forward passes mutate besides ω (BN running statistics).
  virtual std::vector<BufferRef<T>> buffers() { return {}; }
  virtual Tensor<T> train_loss(const Batch<T>& batch) = 0;
  virtual Tensor<T> val_loss(const Batch<T>& batch) = 0;
};

/// Cross-entropy of a SuperNet in training mode on both levels.
template <typename T>
class SuperNetProblem : public BilevelProblem<T> {
 public:
  explicit SuperNetProblem(SuperNet<T>& net);
  std::vector<Parameter<T>*> weights() override { return weights_; }
  std::vector<Tensor<T>> arch() override { return {net_.alpha().normal, net_.alpha().reduce}; }
  std::vector<BufferRef<T>> buffers() override { return buffers_; }
  Tensor<T> train_loss(const Batch<T>& batch) override;
  Tensor<T> val_loss(const Batch<T>& batch) override;

  SuperNet<T>& net() { return net_; }

 private:
  SuperNet<T>& net_;
  std::vector<Parameter<T>*> weights_;
  std::vector<BufferRef<T>> buffers_;
};

/// One gradient per arch() tensor, flat.
template <typename T>
using ArchGradient = std::vector<std::vector<T>>;

/// Finite-difference radius r in h = r / ||v||.
inline constexpr double kHessianRadius = 0.01;

/// omega' = omega - epsilon * grad_omega L_train(omega, alpha), a plain step
/// with no momentum. ω, its momentum and the buffers are left as they were.
template <typename T>
WeightSnapshot<T> virtual_step(BilevelProblem<T>& problem, const Batch<T>& train, T epsilon);

struct HypergradientInfo {
  double val_loss = 0.0;    // L_val at omega'
  double direction_norm = 0.0;  // ||v||
};

/// grad_alpha L_val(omega', alpha) - epsilon * [grad_alpha L_train(omega+) - grad_alpha L_train(omega-)] / 2h
/// with v = grad_omega' L_val(omega', alpha), omega± = omega ± h v, h = radius / ||v||.
/// epsilon == 0 gives grad_alpha L_val(omega, alpha); ||v|| == 0 drops the second term.
/// ω and the buffers are restored before returning.
template <typename T>
ArchGradient<T> alpha_hypergradient(BilevelProblem<T>& problem, const Batch<T>& train, const Batch<T>& val,
                                    T epsilon, HypergradientInfo* info = nullptr, double radius = kHessianRadius);

template <typename T>
struct StepSettings {
  T epsilon = T(0);  // inner step; 0 selects the first-order gradient
  T alpha_lr = T(3e-4);
  T alpha_weight_decay = T(0);
  T omega_lr = T(0.025);
  T momentum = T(0.9);
};

struct StepLosses {
  double train_loss = 0.0;  // L_train before the ω update
  double val_loss = 0.0;    // L_val at the virtual weights
};

/// (a) alpha -= alpha_lr * hypergradient, (b) one momentum SGD step of ω on L_train.
template <typename T>
StepLosses search_step(BilevelProblem<T>& problem, const Batch<T>& train, const Batch<T>& val,
                       const StepSettings<T>& settings);

enum class DecayKind { Cosine, Step };

/// lr0 decayed to min(lr_min, lr0) over `epochs`, evaluated per epoch or per step.
struct LrSchedule {
  DecayKind kind = DecayKind::Cosine;
  double lr0 = 0.025;
  double lr_min = 1e-4;
  std::size_t epochs = 1;
  bool per_step = false;
  std::size_t step_every = 10;  // step decay: epochs between drops
  double step_factor = 0.1;

  double at(std::size_t epoch, std::size_t step = 0, std::size_t steps_per_epoch = 1) const;
};

struct SearchConfig {
  std::size_t epochs = 20;
  LrSchedule omega_lr;
  double momentum = 0.9;
  double alpha_lr = 1.0;
  double alpha_weight_decay = 0.0;
  bool second_order = true;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // cumulative search steps
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;
  double entropy_normal = 0.0;
  double entropy_reduce = 0.0;
  double lr_omega = 0.0;
  double lr_alpha = 0.0;
};

template <typename T>
struct SearchResult {
  std::vector<EpochMetrics> metrics;
  std::vector<AlphaParams<T>> history;  // α after each epoch
  AlphaParams<T> best;                  // α of the epoch with the highest val_top1 (initial α if no epochs)
  std::size_t best_epoch = 0;
  double initial_entropy_normal = 0.0;
  double initial_entropy_reduce = 0.0;
};

/// Epoch-indexed batch lists; called once per epoch.
template <typename T>
using BatchSource = std::function<std::vector<Batch<T>>(std::size_t epoch)>;

/// Runs `config.epochs` epochs of search_step. Each epoch pairs every
/// architecture-train batch with the next architecture-val batch (cycled
/// independently), then evaluates the val split in eval mode.
template <typename T>
SearchResult<T> run_search(SuperNet<T>& net, const SearchConfig& config, const BatchSource<T>& arch_train,
                           const BatchSource<T>& arch_val,
                           const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t samples = 0;
};

/// Single eval-mode pass without recording gradients. Top-k counts a hit
/// when the label is among the k largest logits, ties by lower class index.
template <typename T>
EvalResult evaluate(Module<T>& net, const std::vector<Batch<T>>& batches);

/// Header plus one row per epoch.
std::string metrics_csv(const std::vector<EpochMetrics>& rows);

}  // namespace sarnas
