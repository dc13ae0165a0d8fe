#pragma once

// Self-adaptive training and the plain cross-entropy baseline.

#include "conflab/trainer.hpp"

namespace conflab {

/// Self-adaptive training: soft labels start one-hot, move toward the model's
/// prediction by momentum once epoch > start_epoch, and weight each example
/// by their largest entry. One correction per example per epoch, applied when
/// its batch is visited.
inline TrainResult run_sat(TrainConfig config, const Dataset &train, const Dataset &test,
                           const TrainHooks &hooks = {}) {
  if (config.method != Method::sat) {
    throw std::invalid_argument("run_sat: method must be sat");
  }
  return run_method(config, train, test, hooks);
}

/// One-hot cross-entropy. With early_stop_epoch set, training halts after that
/// epoch and its model is returned.
inline TrainResult run_ce(TrainConfig config, const Dataset &train, const Dataset &test,
                          const TrainHooks &hooks = {}) {
  if (config.method != Method::ce && config.method != Method::ce_early_stop) {
    throw std::invalid_argument("run_ce: method must be ce or ce_early_stop");
  }
  if (config.method == Method::ce_early_stop && !config.early_stop_epoch) {
    throw std::invalid_argument("train.early_stop_epoch: required for ce_early_stop");
  }
  return run_method(config, train, test, hooks);
}

} // namespace conflab
