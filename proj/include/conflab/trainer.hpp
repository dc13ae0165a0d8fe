#pragma once

// Mini-batch training loop shared by every method. The methods differ only in
// how a batch's inputs, targets and weights are formed:
//
//   ce / ce_early_stop   one-hot targets, unit weights
//   sat                  stored soft labels, corrected toward the prediction
//                        after start_epoch, weighted by max_j t_ij
//   mixup                pairs mixed with a permutation of the batch, one-hot
//                        targets mixed alike, unit weights
//   sam                  mixup over stored soft labels, weighted by the max
//                        predicted probability on the mixed input, gated
//                        correction of the parent the mix is close to
//
// Shuffling, initialisation and mixing draw from separate seeded streams so
// that methods which coincide mathematically also coincide bitwise.

#include "conflab/config.hpp"
#include "conflab/data.hpp"
#include "conflab/metrics.hpp"
#include "conflab/mixing.hpp"
#include "conflab/nn.hpp"
#include "conflab/random.hpp"
#include "conflab/soft_labels.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace conflab {

struct TrainResult {
  Network net;
  std::optional<SoftLabelStore> store; // sat and sam only
  RunRecord record;
};

inline std::vector<std::size_t> layer_widths(const TrainConfig &config, std::size_t input_dim,
                                             std::size_t class_count) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), config.hidden_layers.begin(), config.hidden_layers.end());
  widths.push_back(class_count);
  return widths;
}

namespace detail {

inline bool uses_store(Method m) { return m == Method::sat || m == Method::sam; }
inline bool uses_mixing(Method m) { return m == Method::mixup || m == Method::sam; }

inline void check_datasets(const Dataset &train, const Dataset &test) {
  validate(train);
  validate(test);
  require(train.class_count == test.class_count, "train and test class counts differ");
  require(train.dim() == test.dim(), "train and test feature dims differ");
}

class Trainer {
public:
  Trainer(const TrainConfig &config, const Dataset &train, const Dataset &test, const TrainHooks &hooks)
      : config_(checked(config, train, test)), train_(train), test_(test), hooks_(hooks),
        net_(make_network(layer_widths(config, train.dim(), train.class_count), derive_seed(config.seed, kInitStream))),
        optimizer_(config.learning_rate, config.sgd_momentum, config.weight_decay),
        shuffle_rng_(derive_seed(config.seed, kShuffleStream)), mix_rng_(derive_seed(config.seed, kMixStream)) {
    if (uses_store(config.method)) {
      store_ = make_soft_label_store(train.labels, train.class_count, config.start_epoch, config.momentum);
    }
    one_hot_ = Matrix(train.size(), train.class_count);
    for (std::size_t i = 0; i < train.size(); ++i) {
      one_hot_(i, train.labels[i]) = 1.0;
    }
  }

  TrainResult run() {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t last_epoch =
        config_.early_stop_epoch ? std::min(*config_.early_stop_epoch, config_.total_epochs) : config_.total_epochs;

    for (std::size_t epoch = 1; epoch <= last_epoch; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng_);
      EpochTally tally;
      const std::vector<std::size_t> before = store_argmax();
      for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        const std::size_t end = std::min(order.size(), start + config_.batch_size);
        std::span<const std::size_t> ids(order.data() + start, end - start);
        if (uses_mixing(config_.method)) {
          mixed_step(ids, epoch, tally);
        } else {
          plain_step(ids, epoch, tally);
        }
      }
      record_.epochs.push_back(evaluate(epoch, tally, before));
    }
    return {net_, store_, record_};
  }

private:
  struct EpochTally {
    double weight_sum = 0.0;
    double weight_min = 1.0;
    std::size_t weight_count = 0;
    std::size_t label_updates = 0;
    double loss_sum = 0.0;
    std::size_t batches = 0;
  };

  static const TrainConfig &checked(const TrainConfig &config, const Dataset &train, const Dataset &test) {
    validate(config);
    check_datasets(train, test);
    return config;
  }

  bool correcting(std::size_t epoch) const { return epoch > config_.start_epoch; }

  std::span<const double> target_row(std::size_t id) const {
    return store_ ? store_->row(id) : one_hot_.row(id);
  }

  Matrix gather_inputs(std::span<const std::size_t> ids) const {
    Matrix x(ids.size(), train_.dim());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto src = train_.features.row(ids[k]);
      std::copy(src.begin(), src.end(), x.row(k).begin());
    }
    return x;
  }

  void apply(const ForwardPass &pass, const Matrix &targets, const std::vector<double> &weights, EpochTally &tally) {
    for (double w : weights) {
      tally.weight_sum += w;
      tally.weight_min = std::min(tally.weight_min, w);
    }
    tally.weight_count += weights.size();
    tally.loss_sum += weighted_soft_ce(pass.probs, targets, weights);
    ++tally.batches;
    optimizer_.step(net_, backward(net_, pass, targets, weights));
    ++step_;
    if (hooks_.on_step) {
      hooks_.on_step(net_, step_);
    }
  }

  // ce and sat
  void plain_step(std::span<const std::size_t> ids, std::size_t epoch, EpochTally &tally) {
    const ForwardPass pass = forward_pass(net_, gather_inputs(ids));
    if (store_ && correcting(epoch)) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        update_soft_label(store_->row(ids[k]), pass.probs.row(k), store_->momentum);
      }
      tally.label_updates += ids.size();
    }
    Matrix targets(ids.size(), train_.class_count);
    std::vector<double> weights(ids.size(), 1.0);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto t = target_row(ids[k]);
      std::copy(t.begin(), t.end(), targets.row(k).begin());
      if (store_) {
        weights[k] = confidence_weight(t);
      }
    }
    apply(pass, targets, weights, tally);
  }

  // mixup and sam
  void mixed_step(std::span<const std::size_t> ids, std::size_t epoch, EpochTally &tally) {
    const std::size_t n = ids.size();
    std::vector<std::size_t> partner(n);
    std::iota(partner.begin(), partner.end(), std::size_t{0});
    std::shuffle(partner.begin(), partner.end(), mix_rng_);
    std::vector<double> lambdas(n);
    for (double &lambda : lambdas) {
      lambda = hooks_.forced_lambda ? *hooks_.forced_lambda : sample_lambda(config_.mix_alpha, mix_rng_);
    }

    Matrix inputs(n, train_.dim());
    for (std::size_t k = 0; k < n; ++k) {
      mix_into(inputs.row(k), train_.features.row(ids[k]), train_.features.row(ids[partner[k]]), lambdas[k]);
    }
    const ForwardPass pass = forward_pass(net_, inputs);

    std::vector<double> weights(n, 1.0);
    const bool sam = config_.method == Method::sam;
    if (sam && !hooks_.unit_weights) {
      for (std::size_t k = 0; k < n; ++k) {
        weights[k] = confidence_weight(pass.probs.row(k));
      }
    }
    if (sam && correcting(epoch)) {
      for (std::size_t k = 0; k < n; ++k) {
        GateDecision gate = hooks_.gate_closed ? GateDecision{} : label_update_gate(lambdas[k], config_.gamma);
        if (gate.first_parent) {
          update_soft_label(store_->row(ids[k]), pass.probs.row(k), store_->momentum);
          ++tally.label_updates;
        }
        if (gate.second_parent) {
          update_soft_label(store_->row(ids[partner[k]]), pass.probs.row(k), store_->momentum);
          ++tally.label_updates;
        }
        if (hooks_.on_mix) {
          hooks_.on_mix(lambdas[k], gate.any());
        }
      }
    }

    Matrix targets(n, train_.class_count);
    for (std::size_t k = 0; k < n; ++k) {
      mix_into(targets.row(k), target_row(ids[k]), target_row(ids[partner[k]]), lambdas[k]);
    }
    apply(pass, targets, weights, tally);
  }

  std::vector<std::size_t> store_argmax() const {
    std::vector<std::size_t> out;
    if (store_) {
      out.resize(store_->size());
      for (std::size_t i = 0; i < store_->size(); ++i) {
        out[i] = argmax(store_->row(i));
      }
    }
    return out;
  }

  EpochMetrics evaluate(std::size_t epoch, const EpochTally &tally, const std::vector<std::size_t> &before) const {
    EpochMetrics m;
    m.epoch = epoch;
    const auto train_pred = predict(net_, train_.features);
    m.train_acc_noisy = accuracy(train_pred, train_.labels);
    m.train_acc_clean = train_.clean_labels ? accuracy(train_pred, *train_.clean_labels) : m.train_acc_noisy;
    const auto test_pred = predict(net_, test_.features);
    m.test_acc = accuracy(test_pred, test_.labels);
    m.per_class_test_acc = per_class_accuracy(test_pred, test_.labels, test_.class_count);
    m.mean_weight = tally.weight_count ? tally.weight_sum / static_cast<double>(tally.weight_count) : 1.0;
    m.min_weight = tally.weight_min;
    m.soft_label_uniformity = soft_label_uniformity(store_ ? store_->labels : one_hot_);
    if (store_) {
      const auto after = store_argmax();
      for (std::size_t i = 0; i < after.size(); ++i) {
        m.labels_changed_count += after[i] != before[i] ? 1 : 0;
      }
    }
    m.label_updates = tally.label_updates;
    m.train_loss = tally.batches ? tally.loss_sum / static_cast<double>(tally.batches) : 0.0;
    return m;
  }

  TrainConfig config_;
  const Dataset &train_;
  const Dataset &test_;
  TrainHooks hooks_;
  Network net_;
  SgdOptimizer optimizer_;
  std::mt19937_64 shuffle_rng_;
  std::mt19937_64 mix_rng_;
  std::optional<SoftLabelStore> store_;
  Matrix one_hot_;
  RunRecord record_;
  std::size_t step_ = 0;
};

} // namespace detail

/// Runs whichever method config.method selects.
inline TrainResult run_method(const TrainConfig &config, const Dataset &train, const Dataset &test,
                              const TrainHooks &hooks = {}) {
  return detail::Trainer(config, train, test, hooks).run();
}

} // namespace conflab
