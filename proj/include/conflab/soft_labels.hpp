#pragma once

#include "conflab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace conflab {

/// Per-example soft labels t_i, initialised to the one-hot training labels.
struct SoftLabelStore {
  Matrix labels;               // n x classes
  std::size_t start_epoch = 1; // correction fires only for epochs > start_epoch
  double momentum = 0.9;

  std::size_t size() const noexcept { return labels.rows(); }
  std::size_t class_count() const noexcept { return labels.cols(); }
  std::span<double> row(std::size_t i) noexcept { return labels.row(i); }
  std::span<const double> row(std::size_t i) const noexcept { return labels.row(i); }
};

inline SoftLabelStore make_soft_label_store(std::span<const std::size_t> hard_labels, std::size_t class_count,
                                            std::size_t start_epoch, double momentum) {
  detail::require(momentum >= 0.0 && momentum <= 1.0, "momentum must be in [0, 1]");
  detail::require(start_epoch >= 1, "start_epoch must be positive");
  SoftLabelStore store;
  store.labels = Matrix(hard_labels.size(), class_count);
  for (std::size_t i = 0; i < hard_labels.size(); ++i) {
    detail::require(hard_labels[i] < class_count, "label out of range");
    store.labels(i, hard_labels[i]) = 1.0;
  }
  store.start_epoch = start_epoch;
  store.momentum = momentum;
  return store;
}

/// t <- momentum * t + (1 - momentum) * p, in place.
inline void update_soft_label(std::span<double> t, std::span<const double> p, double momentum) {
  detail::require(t.size() == p.size(), "soft label and prediction lengths differ");
  const double keep = momentum;
  const double take = 1.0 - momentum;
  for (std::size_t j = 0; j < t.size(); ++j) {
    t[j] = keep * t[j] + take * p[j];
  }
}

inline std::vector<double> update_soft_label(std::vector<double> t, std::span<const double> p, double momentum) {
  detail::require(momentum >= 0.0 && momentum <= 1.0, "momentum must be in [0, 1]");
  update_soft_label(std::span<double>(t), p, momentum);
  return t;
}

/// Largest entry of a simplex vector.
inline double confidence_weight(std::span<const double> t) {
  detail::require(!t.empty(), "empty probability vector");
  return *std::max_element(t.begin(), t.end());
}

inline bool on_simplex(std::span<const double> v, double tol = 1e-9) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) {
      return false;
    }
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

} // namespace conflab
