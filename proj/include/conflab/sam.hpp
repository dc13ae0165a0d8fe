#pragma once

// Mixup and self-adaptive mixup.

#include "conflab/mixing.hpp"
#include "conflab/trainer.hpp"

namespace conflab {

/// Mixup with fixed one-hot labels and unit weights. Each batch is paired
/// with a seeded permutation of itself; every pair draws its own lambda.
inline TrainResult run_mixup(TrainConfig config, const Dataset &train, const Dataset &test,
                             const TrainHooks &hooks = {}) {
  if (config.method != Method::mixup) {
    throw std::invalid_argument("run_mixup: method must be mixup");
  }
  return run_method(config, train, test, hooks);
}

/// Self-adaptive mixup. Mixed examples are weighted by the model's max
/// predicted probability on the mixed input (from epoch 1). After
/// start_epoch, a parent's soft label moves toward the prediction on the
/// mixed input when lambda lies within gamma of it.
inline TrainResult run_sam(TrainConfig config, const Dataset &train, const Dataset &test,
                           const TrainHooks &hooks = {}) {
  if (config.method != Method::sam) {
    throw std::invalid_argument("run_sam: method must be sam");
  }
  return run_method(config, train, test, hooks);
}

} // namespace conflab
