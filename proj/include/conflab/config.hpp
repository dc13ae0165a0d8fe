#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "conflab/nn.hpp"

namespace conflab {

enum class Method { ce, ce_early_stop, sat, mixup, sam };

inline std::string_view to_string(Method m) {
  switch (m) {
  case Method::ce:
    return "ce";
  case Method::ce_early_stop:
    return "ce_early_stop";
  case Method::sat:
    return "sat";
  case Method::mixup:
    return "mixup";
  case Method::sam:
    return "sam";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (Method m : {Method::ce, Method::ce_early_stop, Method::sat, Method::mixup, Method::sam}) {
    if (to_string(m) == name) {
      return m;
    }
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

struct TrainConfig {
  std::size_t total_epochs = 100;
  std::size_t start_epoch = 60; // label correction for epochs > start_epoch
  double momentum = 0.9;        // soft-label momentum
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  Method method = Method::sat;
  double mix_alpha = 1.0;
  double gamma = 0.1;
  std::optional<std::size_t> early_stop_epoch;
  std::vector<std::size_t> hidden_layers{64, 64};
  double sgd_momentum = 0.0;
  double weight_decay = 0.0;

  bool operator==(const TrainConfig &) const = default;
};

/// Throws std::invalid_argument naming the first offending field.
inline void validate(const TrainConfig &c) {
  auto fail = [](const std::string &field, const std::string &why) {
    throw std::invalid_argument("train." + field + ": " + why);
  };
  if (c.total_epochs == 0) {
    fail("total_epochs", "must be positive");
  }
  if (c.start_epoch == 0) {
    fail("start_epoch", "must be positive");
  }
  if (c.start_epoch > c.total_epochs) {
    fail("start_epoch", "must not exceed total_epochs");
  }
  if (!(c.momentum >= 0.0 && c.momentum <= 1.0)) {
    fail("momentum", "must be in [0, 1]");
  }
  if (!(c.learning_rate > 0.0)) {
    fail("learning_rate", "must be positive");
  }
  if (c.batch_size == 0) {
    fail("batch_size", "must be positive");
  }
  if (!(c.mix_alpha > 0.0)) {
    fail("mix_alpha", "must be positive");
  }
  if (!(c.gamma > 0.0 && c.gamma < 0.5)) {
    fail("gamma", "must be in (0, 0.5)");
  }
  if (c.early_stop_epoch && (*c.early_stop_epoch == 0 || *c.early_stop_epoch > c.total_epochs)) {
    fail("early_stop_epoch", "must be in [1, total_epochs]");
  }
  for (std::size_t w : c.hidden_layers) {
    if (w == 0) {
      fail("hidden_layers", "widths must be positive");
    }
  }
  if (!(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0)) {
    fail("sgd_momentum", "must be in [0, 1)");
  }
  if (!(c.weight_decay >= 0.0)) {
    fail("weight_decay", "must be non-negative");
  }
}

/// Test hooks for the reduction checks between methods.
struct TrainHooks {
  std::optional<double> forced_lambda; // mixup / sam: use this lambda for every pair
  bool gate_closed = false;            // sam: never correct soft labels
  bool unit_weights = false;           // sam: weight every mixed example by 1
  std::function<void(const Network &, std::size_t step)> on_step;
  // sam: called with (lambda, gate fired) for every mixed example after start_epoch
  std::function<void(double, bool)> on_mix;
};

} // namespace conflab
