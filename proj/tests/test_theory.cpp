#include "conflab/theory.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace conflab;

namespace {

std::vector<double> random_unit_positive(std::size_t n, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> q(n);
  double s = 0.0;
  for (double &x : q) {
    x = u(rng);
    s += x * x;
  }
  for (double &x : q) {
    x /= std::sqrt(s);
  }
  return q;
}

} // namespace

TEST(McEstimate, Examples) {
  const std::vector<double> ones(4, 1.0);
  const std::vector<double> losses{0.5, 1.5, -2.0, 4.0};
  EXPECT_DOUBLE_EQ(mc_estimate(losses, ones, ones), 1.0);
  EXPECT_DOUBLE_EQ(mc_estimate(std::vector<double>{3.25}, std::vector<double>{0.4}, std::vector<double>{1.0}), 3.25);
  const std::vector<double> p{0.9, 0.2, 0.5, 0.7};
  const std::vector<double> q{0.3, 1.0, 0.1, 2.0};
  std::vector<double> q7 = q;
  for (double &x : q7) {
    x *= 7.0;
  }
  EXPECT_NEAR(mc_estimate(losses, q, p), mc_estimate(losses, q7, p), 1e-12);
}

TEST(McEstimate, Errors) {
  const std::vector<double> z{0.0, 0.0};
  const std::vector<double> one{1.0, 1.0};
  EXPECT_THROW(mc_estimate(one, z, one), std::invalid_argument);
  EXPECT_THROW(mc_estimate(std::vector<double>{1.0}, one, one), std::invalid_argument);
}

TEST(ClosedFormVariance, Examples) {
  EXPECT_DOUBLE_EQ(closed_form_variance(std::vector<double>{1.0}, std::vector<double>{1.0}, 2.5), 2.5);
  EXPECT_DOUBLE_EQ(closed_form_variance(std::vector<double>(4, 1.0), std::vector<double>(4, 0.5), 1.0), 1.0);
  const std::vector<double> p{0.9, 0.9, 0.3, 0.3};
  double p2 = 0.0;
  for (double x : p) {
    p2 += x * x;
  }
  EXPECT_NEAR(closed_form_variance(p, p, 1.7), 1.7 / p2, 1e-12);
}

TEST(OptimalWeights, Examples) {
  const auto u = optimal_weights(std::vector<double>(4, 0.3));
  for (double x : u) {
    EXPECT_NEAR(x, 0.5, 1e-15);
  }
  const auto q = optimal_weights(std::vector<double>{1.0, 0.5});
  EXPECT_NEAR(q[0], 2.0 / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(q[1], 1.0 / std::sqrt(5.0), 1e-15);
  EXPECT_THROW(optimal_weights(std::vector<double>{0.0, 0.5}), std::invalid_argument);
}

TEST(OptimalWeights, BeatEveryRandomCompetitor) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> up(0.05, 1.0);
  std::uniform_int_distribution<std::size_t> size(1, 12);
  for (int s = 0; s < 100; ++s) {
    std::vector<double> p(size(rng));
    for (double &x : p) {
      x = up(rng);
    }
    const double best = closed_form_variance(optimal_weights(p), p, 1.0);
    for (int k = 0; k < 50; ++k) {
      EXPECT_LE(best, closed_form_variance(random_unit_positive(p.size(), rng), p, 1.0) * (1.0 + 1e-12));
    }
  }
}

TEST(VarianceSweep, AllOnesTracksClosedForm) {
  const WeightingScenario s{std::vector<double>(5, 1.0), {}, 1.0, 0.7, 0.0};
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> qs;
  for (int k = 0; k < 6; ++k) {
    qs.push_back(random_unit_positive(5, rng));
  }
  for (const auto &row : variance_sweep(s, qs, 100000, 5)) {
    double q2 = 0.0;
    double q1 = 0.0;
    for (double x : row.q) {
      q2 += x * x;
      q1 += x;
    }
    EXPECT_NEAR(row.empirical_variance / (q2 / (q1 * q1)), 1.0, 0.05);
    EXPECT_NEAR(row.empirical_variance / row.closed_form_variance, 1.0, 0.05);
  }
}

TEST(VarianceSweep, ProportionalWeightsWin) {
  const std::vector<double> p{0.9, 0.9, 0.3, 0.3};
  const WeightingScenario s{p, {}, 1.0, 1.0, 0.0};
  std::vector<double> sq(p);
  for (double &x : sq) {
    x *= x;
  }
  const auto rows = variance_sweep(s, {optimal_weights(p), std::vector<double>(4, 0.5), sq}, 100000, 6);
  EXPECT_LT(rows[0].empirical_variance, rows[1].empirical_variance);
  EXPECT_LT(rows[0].empirical_variance, rows[2].empirical_variance);
  for (const auto &r : rows) {
    EXPECT_NEAR(r.empirical_variance / r.closed_form_variance, 1.0, 0.05);
  }
}

TEST(VarianceSweep, EstimatorIsUnbiased) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> up(0.1, 1.0);
  std::uniform_real_distribution<double> mean(-1.0, 1.0);
  for (int s = 0; s < 5; ++s) {
    std::vector<double> p(6);
    for (double &x : p) {
      x = up(rng);
    }
    const WeightingScenario sc{p, {}, 2.0, mean(rng), 0.0};
    const auto q = random_unit_positive(6, rng);
    const auto row = variance_sweep(sc, {q}, 100000, 8 + static_cast<std::uint64_t>(s))[0];
    const double se = std::sqrt(row.empirical_variance / 1e5);
    EXPECT_NEAR(row.empirical_mean, sc.in_dist_loss_mean, 3.0 * se);
  }
}

TEST(VarianceSweep, ScalingQChangesNothing) {
  const std::vector<double> p{0.8, 0.4, 0.6};
  const WeightingScenario s{p, {}, 1.0, 0.5, 0.0};
  const std::vector<double> q{0.2, 0.5, 0.9};
  std::vector<double> q3(q);
  for (double &x : q3) {
    x *= 3.0;
  }
  const auto rows = variance_sweep(s, {q, q3}, 20000, 9);
  EXPECT_NEAR(rows[0].empirical_mean, rows[1].empirical_mean, 1e-12);
  EXPECT_NEAR(rows[0].empirical_variance / rows[1].empirical_variance, 1.0, 1e-10);
  EXPECT_NEAR(rows[0].closed_form_variance / rows[1].closed_form_variance, 1.0, 1e-12);
}

TEST(VarianceSweep, MoreTrialsShrinkTheGap) {
  const std::vector<double> p{0.9, 0.5, 0.3, 0.7};
  const WeightingScenario s{p, {}, 1.0, 1.0, 0.0};
  std::mt19937_64 rng(10);
  std::vector<std::vector<double>> qs;
  for (int k = 0; k < 30; ++k) {
    qs.push_back(random_unit_positive(4, rng));
  }
  auto mean_gap = [&](std::size_t trials) {
    double g = 0.0;
    for (const auto &r : variance_sweep(s, qs, trials, 11)) {
      g += std::abs(r.empirical_variance / r.closed_form_variance - 1.0);
    }
    return g / static_cast<double>(qs.size());
  };
  EXPECT_LT(mean_gap(160000), mean_gap(10000));
}

TEST(VarianceSweep, Preconditions) {
  const WeightingScenario s{{0.5, 0.5}, {}, 1.0, 0.0, 0.0};
  EXPECT_THROW(variance_sweep(s, {{1.0, 1.0}}, 9999, 1), std::invalid_argument);
  EXPECT_THROW(variance_sweep(s, {{1.0}}, 10000, 1), std::invalid_argument);
  EXPECT_THROW(variance_sweep(s, {{1.0, 0.0}}, 10000, 1), std::invalid_argument);
  const WeightingScenario shifted{{0.5, 0.5}, {}, 1.0, 0.0, 0.3};
  EXPECT_THROW(variance_sweep(shifted, {{1.0, 1.0}}, 10000, 1), std::invalid_argument);
}

TEST(IncompleteBeta, MatchesQuadrature) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ab(1.0, 6.0);
  std::uniform_real_distribution<double> ux(0.02, 0.98);
  for (int k = 0; k < 40; ++k) {
    const double a = ab(rng);
    const double b = ab(rng);
    const double x = ux(rng);
    const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    const double ref = oracle::integrate(
        [&](double t) { return std::exp(log_norm + (a - 1.0) * std::log(t) + (b - 1.0) * std::log1p(-t)); }, 0.0,
        x, 1e-13);
    EXPECT_NEAR(regularized_incomplete_beta(x, a, b), ref, 1e-8) << a << " " << b << " " << x;
  }
  EXPECT_EQ(regularized_incomplete_beta(0.0, 2.0, 3.0), 0.0);
  EXPECT_EQ(regularized_incomplete_beta(1.0, 2.0, 3.0), 1.0);
  EXPECT_NEAR(regularized_incomplete_beta(0.3, 1.0, 1.0), 0.3, 1e-14);
  EXPECT_NEAR(regularized_incomplete_beta(0.5, 2.5, 2.5), 0.5, 1e-14);
  EXPECT_NEAR(regularized_incomplete_beta(0.3, 2.0, 3.0) + regularized_incomplete_beta(0.7, 3.0, 2.0), 1.0, 1e-14);
}

TEST(UpdateProbability, AlphaOneGammaTenthIsOneFifth) {
  EXPECT_NEAR(label_update_probability(1.0, 0.1), 0.2, 1e-9);
}

TEST(UpdateProbability, MatchesQuadratureOracle) {
  EXPECT_NEAR(label_update_probability(0.2, 0.1), oracle::update_probability_by_quadrature(0.2, 0.1), 1e-6);
  for (double a : {0.5, 2.0, 5.0}) {
    for (double g : {0.05, 0.1, 0.3}) {
      EXPECT_NEAR(label_update_probability(a, g), oracle::update_probability_by_quadrature(a, g), 1e-6);
    }
  }
}

TEST(UpdateProbability, EqualsTwiceTheLowerTail) {
  for (double a : {0.1, 0.7, 3.0}) {
    EXPECT_NEAR(label_update_probability(a, 0.2), 2.0 * regularized_incomplete_beta(0.2, a, a), 1e-12);
  }
}

TEST(UpdateProbability, DecreasesWithAlpha) {
  const std::vector<double> grid{0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
  for (std::size_t k = 1; k < grid.size(); ++k) {
    EXPECT_LT(label_update_probability(grid[k], 0.1), label_update_probability(grid[k - 1], 0.1));
  }
}

TEST(UpdateProbability, GammaNearHalfApproachesOne) {
  EXPECT_NEAR(label_update_probability(1.0, 0.5 - 1e-9), 1.0, 1e-8);
  EXPECT_NEAR(label_update_probability(3.0, 0.5 - 1e-9), 1.0, 1e-7);
}

TEST(UpdateProbability, Errors) {
  EXPECT_THROW(label_update_probability(0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(label_update_probability(1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(label_update_probability(1.0, 0.0), std::invalid_argument);
}
