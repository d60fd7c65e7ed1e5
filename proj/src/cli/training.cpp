#include "sarnas/training.hpp"

#include <charconv>
#include <cmath>

#include "sarnas/error.hpp"
#include "sarnas/random.hpp"

namespace sarnas {

template <typename T>
TrainResult train_classifier(Module<T>& net, const Dataset& data, const std::vector<std::size_t>& train,
                             const std::vector<std::size_t>& val, const TrainConfig& config,
                             const std::function<void(const TrainEpoch&)>& on_epoch) {
  if (train.empty()) throw ConfigError("training split is empty");
  auto params = net.parameters();
  const auto buffers = net.buffers();
  const std::vector<Batch<T>> val_batches = make_batches<T>(data, val, config.batch);
  TrainResult result;
  double best_top1 = -1.0;
  WeightSnapshot<T> best_weights;
  WeightSnapshot<T> best_buffers;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = train;
    seeded_shuffle(order, derive_seed(config.seed, epoch));
    const std::vector<Batch<T>> batches = make_batches<T>(data, order, config.batch);
    TrainEpoch row;
    row.epoch = epoch + 1;
    row.lr = config.lr.at(epoch);
    net.set_training(true);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      const Batch<T>& batch = batches[i];
      const double lr = config.lr.at(epoch, i, batches.size());
      const auto ce = softmax_cross_entropy(net.forward(batch.inputs), std::span<const int>(batch.labels));
      const std::size_t classes = ce.probabilities.size() / batch.labels.size();
      for (std::size_t b = 0; b < batch.labels.size(); ++b) {
        std::size_t arg = 0;
        for (std::size_t k = 1; k < classes; ++k) {
          if (ce.probabilities[b * classes + k] > ce.probabilities[b * classes + arg]) arg = k;
        }
        hits += arg == static_cast<std::size_t>(batch.labels[b]);
      }
      loss_sum += static_cast<double>(ce.loss.item()) * static_cast<double>(batch.labels.size());
      if (!std::isfinite(static_cast<double>(ce.loss.item()))) {
        throw NumericFault("training loss is not finite at epoch " + std::to_string(epoch + 1));
      }
      backward(ce.loss);
      sgd_momentum_step<T>(params, static_cast<T>(lr), static_cast<T>(config.momentum));
    }
    row.train_loss = loss_sum / static_cast<double>(train.size());
    row.train_top1 = static_cast<double>(hits) / static_cast<double>(train.size());
    if (!val_batches.empty()) {
      const EvalResult eval = evaluate<T>(net, val_batches);
      row.val_loss = eval.loss;
      row.val_top1 = eval.top1;
    }
    result.epochs.push_back(row);
    const bool better = val_batches.empty() || row.val_top1 > best_top1;
    if (better) {
      best_top1 = row.val_top1;
      result.best_epoch = row.epoch;
      best_weights = snapshot_values<T>(params);
      best_buffers = snapshot_buffers<T>(buffers);
    }
    if (on_epoch) on_epoch(row);
  }
  if (!best_weights.empty()) {
    load_values<T>(params, best_weights);
    load_buffers<T>(buffers, best_buffers);
  }
  net.set_training(false);
  return result;
}

std::string train_metrics_csv(const std::vector<TrainEpoch>& rows) {
  std::string out = "epoch,train_loss,train_top1,val_loss,val_top1,lr\n";
  char buf[64];
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_loss, r.train_top1, r.val_loss, r.val_top1, r.lr}) {
      out += ',';
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

template TrainResult train_classifier(Module<float>&, const Dataset&, const std::vector<std::size_t>&,
                                      const std::vector<std::size_t>&, const TrainConfig&,
                                      const std::function<void(const TrainEpoch&)>&);
template TrainResult train_classifier(Module<double>&, const Dataset&, const std::vector<std::size_t>&,
                                      const std::vector<std::size_t>&, const TrainConfig&,
                                      const std::function<void(const TrainEpoch&)>&);

}  // namespace sarnas
