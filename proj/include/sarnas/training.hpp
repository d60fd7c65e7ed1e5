#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sarnas/bilevel.hpp"
#include "sarnas/skeleton.hpp"

namespace sarnas {

struct TrainConfig {
  std::size_t epochs = 30;
  LrSchedule lr;
  double momentum = 0.9;
  std::size_t batch = 16;
  std::uint64_t seed = 1;  // batch order
};

struct TrainEpoch {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_top1 = 0.0;  // on training-mode logits while updating
  double val_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainEpoch> epochs;
  std::size_t best_epoch = 0;  // highest val top-1, or the last epoch without a val split
};

/// Momentum SGD on cross-entropy over shuffled minibatches. On return the
/// network holds the weights and BN statistics of the best epoch.
template <typename T>
TrainResult train_classifier(Module<T>& net, const Dataset& data, const std::vector<std::size_t>& train,
                             const std::vector<std::size_t>& val, const TrainConfig& config,
                             const std::function<void(const TrainEpoch&)>& on_epoch = {});

std::string train_metrics_csv(const std::vector<TrainEpoch>& rows);

}  // namespace sarnas
