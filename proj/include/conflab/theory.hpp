#pragma once

// Variance of the importance-weighted loss estimator
//
//   sum_i q_i * l_i / sum_i p_i * q_i
//
// where point i is in-distribution with probability p_i, and the probability
// that a Beta(a, a) mixing coefficient lands within gamma of either end.

#include "conflab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace conflab {

/// Loss model for the estimator. Out-of-distribution losses have mean zero;
/// every point's loss has variance `per_point_loss_variance` regardless of p_i.
struct WeightingScenario {
  std::vector<double> in_dist_probs;
  std::vector<double> weights;
  double per_point_loss_variance = 1.0;
  double in_dist_loss_mean = 0.0;
  double out_dist_loss_mean = 0.0;
};

namespace detail {

inline double weighted_denominator(std::span<const double> q, std::span<const double> p) {
  require(q.size() == p.size() && !q.empty(), "q and p must have equal, nonzero length");
  double denom = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    denom += p[i] * q[i];
  }
  if (!(denom > 0.0)) {
    throw std::invalid_argument("sum of p_i * q_i must be positive");
  }
  return denom;
}

} // namespace detail

inline double mc_estimate(std::span<const double> losses, std::span<const double> q, std::span<const double> p) {
  detail::require(losses.size() == q.size(), "losses and q lengths differ");
  const double denom = detail::weighted_denominator(q, p);
  double num = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    num += q[i] * losses[i];
  }
  return num / denom;
}

/// v * ||q||^2 / (sum p_i q_i)^2
inline double closed_form_variance(std::span<const double> q, std::span<const double> p, double v) {
  const double denom = detail::weighted_denominator(q, p);
  double q2 = 0.0;
  for (double x : q) {
    q2 += x * x;
  }
  return v * q2 / (denom * denom);
}

/// p scaled to unit L2 norm.
inline std::vector<double> optimal_weights(std::span<const double> p) {
  double norm = 0.0;
  for (double x : p) {
    detail::require(x > 0.0 && x <= 1.0, "in-distribution probabilities must be in (0, 1]");
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<double> q(p.begin(), p.end());
  for (double &x : q) {
    x /= norm;
  }
  return q;
}

struct VarianceRow {
  std::vector<double> q;
  double empirical_mean = 0.0;
  double empirical_variance = 0.0;
  double closed_form_variance = 0.0;
};

/// Simulates the estimator for each candidate weight vector on common random
/// draws and reports the sample mean and variance next to the closed form.
inline std::vector<VarianceRow> variance_sweep(const WeightingScenario &scenario,
                                               const std::vector<std::vector<double>> &candidate_qs,
                                               std::size_t trials, std::uint64_t seed) {
  detail::require(trials >= 10000, "variance_sweep needs at least 10^4 trials");
  const auto &p = scenario.in_dist_probs;
  const std::size_t n = p.size();
  detail::require(n > 0, "scenario has no points");
  detail::require(scenario.per_point_loss_variance > 0.0, "loss variance must be positive");
  detail::require(scenario.out_dist_loss_mean == 0.0, "out-of-distribution loss mean is normalised to 0");
  for (double x : p) {
    detail::require(x > 0.0 && x <= 1.0, "in-distribution probabilities must be in (0, 1]");
  }

  // Within-component spread chosen so that Var(l_i) = v for every i.
  const double mu = scenario.in_dist_loss_mean;
  std::vector<double> sigma(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double within = scenario.per_point_loss_variance - mu * mu * p[i] * (1.0 - p[i]);
    if (!(within > 0.0)) {
      throw std::invalid_argument("in_dist_loss_mean too large for the requested per-point loss variance");
    }
    sigma[i] = std::sqrt(within);
  }

  std::vector<double> denoms;
  std::vector<VarianceRow> rows;
  for (const auto &q : candidate_qs) {
    detail::require(q.size() == n, "candidate q has the wrong length");
    for (double x : q) {
      detail::require(x > 0.0, "candidate weights must be positive");
    }
    denoms.push_back(detail::weighted_denominator(q, p));
    rows.push_back({q, 0.0, 0.0, closed_form_variance(q, p, scenario.per_point_loss_variance)});
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> losses(n);
  std::vector<double> m2(rows.size(), 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool in_dist = coin(rng) < p[i];
      losses[i] = (in_dist ? mu : 0.0) + sigma[i] * gauss(rng);
    }
    const double count = static_cast<double>(t + 1);
    for (std::size_t c = 0; c < rows.size(); ++c) {
      double num = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        num += rows[c].q[i] * losses[i];
      }
      const double est = num / denoms[c];
      const double delta = est - rows[c].empirical_mean;
      rows[c].empirical_mean += delta / count;
      m2[c] += delta * (est - rows[c].empirical_mean);
    }
  }
  for (std::size_t c = 0; c < rows.size(); ++c) {
    rows[c].empirical_variance = m2[c] / static_cast<double>(trials - 1);
  }
  return rows;
}

namespace detail {

// Continued fraction for the incomplete beta function, modified Lentz.
inline double incomplete_beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) {
    d = tiny;
  }
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) {
      d = tiny;
    }
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) {
      c = tiny;
    }
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) {
      d = tiny;
    }
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) {
      c = tiny;
    }
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) {
      return h;
    }
  }
  throw std::runtime_error("incomplete beta continued fraction did not converge");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b), the Beta(a, b) CDF at x.
inline double regularized_incomplete_beta(double x, double a, double b) {
  detail::require(a > 0.0 && b > 0.0, "beta parameters must be positive");
  detail::require(x >= 0.0 && x <= 1.0, "x must be in [0, 1]");
  if (x == 0.0 || x == 1.0) {
    return x;
  }
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::incomplete_beta_cf(a, b, x) / a;
  }
  return 1.0 - front * detail::incomplete_beta_cf(b, a, 1.0 - x) / b;
}

/// P(lambda < gamma or lambda > 1 - gamma) for lambda ~ Beta(mix_alpha, mix_alpha).
inline double label_update_probability(double mix_alpha, double gamma) {
  if (!(mix_alpha > 0.0)) {
    throw std::invalid_argument("mix_alpha must be positive");
  }
  if (!(gamma > 0.0 && gamma < 0.5)) {
    throw std::invalid_argument("gamma must be in (0, 0.5)");
  }
  const double inside = regularized_incomplete_beta(1.0 - gamma, mix_alpha, mix_alpha) -
                        regularized_incomplete_beta(gamma, mix_alpha, mix_alpha);
  return std::clamp(1.0 - inside, 0.0, 1.0);
}

} // namespace conflab
