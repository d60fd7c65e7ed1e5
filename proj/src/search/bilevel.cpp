#include "sarnas/bilevel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "sarnas/error.hpp"

namespace sarnas {

namespace {

template <typename T>
std::vector<T> grad_or_zero(const Tensor<T>& t) {
  if (!t.has_grad()) return std::vector<T>(t.numel(), T(0));
  return {t.grad().begin(), t.grad().end()};
}

template <typename T>
WeightSnapshot<T> weight_grads(const std::vector<Parameter<T>*>& params) {
  WeightSnapshot<T> out;
  out.reserve(params.size());
  for (auto* p : params) out.push_back(grad_or_zero(p->tensor()));
  return out;
}

template <typename T>
ArchGradient<T> arch_grads(const std::vector<Tensor<T>>& arch) {
  ArchGradient<T> out;
  out.reserve(arch.size());
  for (const auto& a : arch) out.push_back(grad_or_zero(a));
  return out;
}

template <typename T>
void require_finite(const std::vector<std::vector<T>>& grads, const char* what) {
  for (const auto& g : grads) {
    for (T v : g) {
      if (!std::isfinite(static_cast<double>(v))) throw NumericFault(std::string("non-finite gradient in ") + what);
    }
  }
}

template <typename T>
void set_arch_requires_grad(std::vector<Tensor<T>>& arch, bool flag) {
  for (auto& a : arch) a.set_requires_grad(flag);
}

template <typename T>
void clear_arch_grads(std::vector<Tensor<T>>& arch) {
  for (auto& a : arch) a.zero_grad();
}

/// Records which tensors need gradients for one pass and restores the default
/// (everything trainable) afterwards.
template <typename T>
class PassScope {
 public:
  PassScope(BilevelProblem<T>& problem, bool omega, bool alpha)
      : params_(problem.weights()), arch_(problem.arch()) {
    set_requires_grad<T>(params_, omega);
    set_arch_requires_grad(arch_, alpha);
    zero_grads<T>(params_);
    clear_arch_grads(arch_);
  }
  ~PassScope() {
    zero_grads<T>(params_);
    clear_arch_grads(arch_);
    set_requires_grad<T>(params_, true);
    set_arch_requires_grad(arch_, true);
  }
  PassScope(const PassScope&) = delete;
  PassScope& operator=(const PassScope&) = delete;

  const std::vector<Parameter<T>*>& params() const { return params_; }
  const std::vector<Tensor<T>>& arch() const { return arch_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> arch_;
};

template <typename T>
WeightSnapshot<T> offset_weights(const WeightSnapshot<T>& base, const WeightSnapshot<T>& direction, double scale) {
  WeightSnapshot<T> out = base;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < out[i].size(); ++k) {
      out[i][k] = static_cast<T>(static_cast<double>(out[i][k]) + scale * static_cast<double>(direction[i][k]));
    }
  }
  return out;
}

template <typename T>
std::size_t top_rank(std::span<const T> logits, int label) {
  // number of classes that outrank the label (higher logit, or equal with lower index)
  const T target = logits[static_cast<std::size_t>(label)];
  std::size_t rank = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (logits[k] > target || (logits[k] == target && k < static_cast<std::size_t>(label))) ++rank;
  }
  return rank;
}

void append_number(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

}  // namespace

template <typename T>
SuperNetProblem<T>::SuperNetProblem(SuperNet<T>& net)
    : net_(net), weights_(net.parameters()), buffers_(net.buffers()) {}

template <typename T>
Tensor<T> SuperNetProblem<T>::train_loss(const Batch<T>& batch) {
  net_.set_training(true);
  return softmax_cross_entropy(net_.forward(batch.inputs), std::span<const int>(batch.labels)).loss;
}

template <typename T>
Tensor<T> SuperNetProblem<T>::val_loss(const Batch<T>& batch) {
  net_.set_training(true);
  return softmax_cross_entropy(net_.forward(batch.inputs), std::span<const int>(batch.labels)).loss;
}

template <typename T>
WeightSnapshot<T> virtual_step(BilevelProblem<T>& problem, const Batch<T>& train, T epsilon) {
  auto params = problem.weights();
  WeightSnapshot<T> omega = snapshot_values<T>(params);
  if (epsilon == T(0)) return omega;
  const auto buffers = problem.buffers();
  const WeightSnapshot<T> saved_buffers = snapshot_buffers<T>(buffers);
  WeightSnapshot<T> grads;
  {
    PassScope<T> scope(problem, true, false);
    backward(problem.train_loss(train));
    grads = weight_grads(scope.params());
  }
  load_buffers<T>(buffers, saved_buffers);
  require_finite(grads, "virtual step");
  for (std::size_t i = 0; i < omega.size(); ++i) {
    for (std::size_t k = 0; k < omega[i].size(); ++k) omega[i][k] -= epsilon * grads[i][k];
  }
  return omega;
}

template <typename T>
ArchGradient<T> alpha_hypergradient(BilevelProblem<T>& problem, const Batch<T>& train, const Batch<T>& val,
                                    T epsilon, HypergradientInfo* info, double radius) {
  auto params = problem.weights();
  const auto buffers = problem.buffers();
  const WeightSnapshot<T> omega = snapshot_values<T>(params);
  const WeightSnapshot<T> saved_buffers = snapshot_buffers<T>(buffers);
  HypergradientInfo local;

  ArchGradient<T> result;
  if (epsilon == T(0)) {
    PassScope<T> scope(problem, false, true);
    Tensor<T> loss = problem.val_loss(val);
    local.val_loss = static_cast<double>(loss.item());
    backward(loss);
    result = arch_grads(scope.arch());
  } else {
    const WeightSnapshot<T> omega_prime = virtual_step(problem, train, epsilon);
    load_values<T>(params, omega_prime);
    WeightSnapshot<T> v;
    {
      PassScope<T> scope(problem, true, true);
      Tensor<T> loss = problem.val_loss(val);
      local.val_loss = static_cast<double>(loss.item());
      backward(loss);
      result = arch_grads(scope.arch());
      v = weight_grads(scope.params());
    }
    require_finite(v, "validation loss");
    double norm_sq = 0.0;
    for (const auto& g : v) {
      for (T x : g) norm_sq += static_cast<double>(x) * static_cast<double>(x);
    }
    local.direction_norm = std::sqrt(norm_sq);
    if (local.direction_norm > 0.0) {
      const double h = radius / local.direction_norm;
      auto train_arch_grad = [&](double sign) {
        load_values<T>(params, offset_weights(omega, v, sign * h));
        PassScope<T> scope(problem, false, true);
        backward(problem.train_loss(train));
        return arch_grads(scope.arch());
      };
      const ArchGradient<T> plus = train_arch_grad(1.0);
      const ArchGradient<T> minus = train_arch_grad(-1.0);
      const double factor = static_cast<double>(epsilon) / (2.0 * h);
      for (std::size_t i = 0; i < result.size(); ++i) {
        for (std::size_t k = 0; k < result[i].size(); ++k) {
          const double diff = static_cast<double>(plus[i][k]) - static_cast<double>(minus[i][k]);
          result[i][k] = static_cast<T>(static_cast<double>(result[i][k]) - factor * diff);
        }
      }
    }
    load_values<T>(params, omega);
  }
  load_buffers<T>(buffers, saved_buffers);
  require_finite(result, "architecture hypergradient");
  if (info != nullptr) *info = local;
  return result;
}

template <typename T>
StepLosses search_step(BilevelProblem<T>& problem, const Batch<T>& train, const Batch<T>& val,
                       const StepSettings<T>& settings) {
  StepLosses losses;
  HypergradientInfo info;
  const ArchGradient<T> grad = alpha_hypergradient(problem, train, val, settings.epsilon, &info);
  losses.val_loss = info.val_loss;
  auto arch = problem.arch();
  for (std::size_t i = 0; i < arch.size(); ++i) {
    auto values = arch[i].mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] -= settings.alpha_lr * (grad[i][k] + settings.alpha_weight_decay * values[k]);
    }
  }

  PassScope<T> scope(problem, true, false);
  Tensor<T> loss = problem.train_loss(train);
  losses.train_loss = static_cast<double>(loss.item());
  backward(loss);
  require_finite(weight_grads(scope.params()), "weight update");
  sgd_momentum_step<T>(scope.params(), settings.omega_lr, settings.momentum);
  return losses;
}

double LrSchedule::at(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch) const {
  const double floor = std::min(lr_min, lr0);
  if (kind == DecayKind::Step) {
    const std::size_t drops = step_every == 0 ? 0 : epoch / step_every;
    return std::max(floor, lr0 * std::pow(step_factor, static_cast<double>(drops)));
  }
  if (epochs == 0) return lr0;
  double progress = static_cast<double>(epoch);
  if (per_step && steps_per_epoch > 0) progress += static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  progress /= static_cast<double>(epochs);
  return floor + 0.5 * (lr0 - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
SearchResult<T> run_search(SuperNet<T>& net, const SearchConfig& config, const BatchSource<T>& arch_train,
                           const BatchSource<T>& arch_val, const std::function<void(const EpochMetrics&)>& on_epoch) {
  SuperNetProblem<T> problem(net);
  SearchResult<T> result;
  result.initial_entropy_normal = mean_edge_entropy(net.alpha().normal);
  result.initial_entropy_reduce = mean_edge_entropy(net.alpha().reduce);
  result.best = net.alpha().clone();
  double best_top1 = -1.0;
  std::size_t total_steps = 0;
  std::size_t val_cursor = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<Batch<T>> train = arch_train(epoch);
    const std::vector<Batch<T>> val = arch_val(epoch);
    if (train.empty() || val.empty()) throw ConfigError("search needs non-empty architecture train and val splits");

    double train_sum = 0.0;
    StepSettings<T> settings;
    settings.alpha_lr = static_cast<T>(config.alpha_lr);
    settings.alpha_weight_decay = static_cast<T>(config.alpha_weight_decay);
    settings.momentum = static_cast<T>(config.momentum);
    for (std::size_t step = 0; step < train.size(); ++step) {
      const double lr = config.omega_lr.at(epoch, step, train.size());
      settings.omega_lr = static_cast<T>(lr);
      settings.epsilon = config.second_order ? static_cast<T>(lr) : T(0);
      const Batch<T>& val_batch = val[val_cursor++ % val.size()];
      try {
        train_sum += search_step<T>(problem, train[step], val_batch, settings).train_loss;
      } catch (const NumericFault& e) {
        throw NumericFault("epoch " + std::to_string(epoch + 1) + " step " + std::to_string(step + 1) + ": " +
                           e.what());
      }
      ++total_steps;
    }

    const EvalResult eval = evaluate<T>(net, val);
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.step = total_steps;
    m.train_loss = train_sum / static_cast<double>(train.size());
    m.val_loss = eval.loss;
    m.val_top1 = eval.top1;
    m.entropy_normal = mean_edge_entropy(net.alpha().normal);
    m.entropy_reduce = mean_edge_entropy(net.alpha().reduce);
    m.lr_omega = config.omega_lr.at(epoch, 0, train.size());
    m.lr_alpha = config.alpha_lr;
    result.metrics.push_back(m);
    result.history.push_back(net.alpha().clone());
    if (m.val_top1 > best_top1) {
      best_top1 = m.val_top1;
      result.best = net.alpha().clone();
      result.best_epoch = m.epoch;
    }
    if (on_epoch) on_epoch(m);
  }
  return result;
}

template <typename T>
EvalResult evaluate(Module<T>& net, const std::vector<Batch<T>>& batches) {
  const bool was_training = net.training();
  net.set_training(false);
  NoGradGuard no_grad;
  EvalResult out;
  double loss_sum = 0.0;
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  for (const auto& batch : batches) {
    Tensor<T> logits = net.forward(batch.inputs);
    const auto ce = softmax_cross_entropy(logits, std::span<const int>(batch.labels));
    loss_sum += static_cast<double>(ce.loss.item()) * static_cast<double>(batch.labels.size());
    const std::size_t classes = logits.shape()[1];
    for (std::size_t b = 0; b < batch.labels.size(); ++b) {
      const std::size_t rank = top_rank(logits.values().subspan(b * classes, classes), batch.labels[b]);
      hit1 += rank < 1;
      hit5 += rank < 5;
    }
    out.samples += batch.labels.size();
  }
  net.set_training(was_training);
  if (out.samples > 0) {
    const double n = static_cast<double>(out.samples);
    out.loss = loss_sum / n;
    out.top1 = static_cast<double>(hit1) / n;
    out.top5 = static_cast<double>(hit5) / n;
  }
  return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out =
      "epoch,step,train_loss,val_loss,val_top1,mean_edge_entropy_normal,mean_edge_entropy_reduce,lr_omega,lr_alpha\n";
  for (const auto& m : rows) {
    out += std::to_string(m.epoch) + ',' + std::to_string(m.step);
    for (double v : {m.train_loss, m.val_loss, m.val_top1, m.entropy_normal, m.entropy_reduce, m.lr_omega,
                     m.lr_alpha}) {
      out += ',';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

#define SARNAS_INSTANTIATE_BILEVEL(T)                                                                              \
  template class SuperNetProblem<T>;                                                                               \
  template WeightSnapshot<T> virtual_step(BilevelProblem<T>&, const Batch<T>&, T);                                 \
  template ArchGradient<T> alpha_hypergradient(BilevelProblem<T>&, const Batch<T>&, const Batch<T>&, T,            \
                                               HypergradientInfo*, double);                                        \
  template StepLosses search_step(BilevelProblem<T>&, const Batch<T>&, const Batch<T>&, const StepSettings<T>&);   \
  template SearchResult<T> run_search(SuperNet<T>&, const SearchConfig&, const BatchSource<T>&,                    \
                                      const BatchSource<T>&, const std::function<void(const EpochMetrics&)>&);     \
  template EvalResult evaluate(Module<T>&, const std::vector<Batch<T>>&);

SARNAS_INSTANTIATE_BILEVEL(float)
SARNAS_INSTANTIATE_BILEVEL(double)

}  // namespace sarnas
