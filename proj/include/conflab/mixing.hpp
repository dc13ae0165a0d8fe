#pragma once

// Mixup primitives: Beta-distributed mixing coefficients, convex combination
// of two examples, and the cutoff gate that decides which parent's soft label
// may be corrected.

#include "conflab/nn.hpp"

#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace conflab {

struct MixedExample {
  std::vector<double> input;
  std::vector<double> soft_label;
  double lambda = 1.0;
  std::pair<std::size_t, std::size_t> parent_ids{0, 0};
};

/// Draws lambda ~ Beta(mix_alpha, mix_alpha) as g1 / (g1 + g2) with
/// g1, g2 ~ Gamma(mix_alpha, 1).
template <class Rng> double sample_lambda(double mix_alpha, Rng &rng) {
  if (!(mix_alpha > 0.0)) {
    throw std::invalid_argument("mix_alpha must be positive");
  }
  std::gamma_distribution<double> gamma(mix_alpha, 1.0);
  while (true) {
    const double g1 = gamma(rng);
    const double g2 = gamma(rng);
    const double sum = g1 + g2;
    if (sum > 0.0) {
      return g1 / sum;
    }
  }
}

/// out = lambda * a + (1 - lambda) * b
inline void mix_into(std::span<double> out, std::span<const double> a, std::span<const double> b, double lambda) {
  const double other = 1.0 - lambda;
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = lambda * a[k] + other * b[k];
  }
}

inline MixedExample mix(std::span<const double> x_i, std::span<const double> t_i, std::span<const double> x_j,
                        std::span<const double> t_j, double lambda, std::pair<std::size_t, std::size_t> parents = {}) {
  detail::require(x_i.size() == x_j.size(), "mixed inputs differ in dimension");
  detail::require(t_i.size() == t_j.size(), "mixed labels differ in class count");
  detail::require(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0, 1]");
  MixedExample out;
  out.input.resize(x_i.size());
  out.soft_label.resize(t_i.size());
  mix_into(out.input, x_i, x_j, lambda);
  mix_into(out.soft_label, t_i, t_j, lambda);
  out.lambda = lambda;
  out.parent_ids = parents;
  return out;
}

struct GateDecision {
  bool first_parent = false;
  bool second_parent = false;

  bool any() const noexcept { return first_parent || second_parent; }
  bool operator==(const GateDecision &) const = default;
};

/// First parent iff lambda > 1 - gamma; second parent iff lambda < gamma.
inline GateDecision label_update_gate(double lambda, double gamma) {
  if (!(gamma > 0.0 && gamma < 0.5)) {
    throw std::invalid_argument("gamma must be in (0, 0.5)");
  }
  return {lambda > 1.0 - gamma, lambda < gamma};
}

} // namespace conflab
