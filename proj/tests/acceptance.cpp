// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line each. Exit status is nonzero if any criterion fails.

#include "conflab/conflab.hpp"
#include "conflab/experiment.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <sys/wait.h>

using namespace conflab;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double worst_at(const RunRecord &r, std::size_t epoch) {
  return worst_class_accuracy(r.epochs.at(epoch - 1).per_class_test_acc);
}

std::vector<Network> trajectory(const TrainConfig &c, const Dataset &train, const Dataset &test, TrainHooks hooks = {}) {
  std::vector<Network> steps;
  hooks.on_step = [&](const Network &net, std::size_t) { steps.push_back(net); };
  run_method(c, train, test, hooks);
  return steps;
}

std::pair<Dataset, Dataset> noisy_mixture(std::size_t per_class, double rate, std::uint64_t seed) {
  const MixtureSpec spec{4, 10, 3.0, 1.0, seed};
  auto [train, test] =
      make_gaussian_mixture_split(spec, std::vector<std::size_t>(4, per_class), std::vector<std::size_t>(4, 250));
  train = inject_noise(train, {NoiseKind::uniform, rate, derive_seed(seed, 1)});
  return {train, test};
}

TrainConfig base_train(Method m, std::size_t epochs, std::size_t start) {
  TrainConfig c;
  c.method = m;
  c.total_epochs = epochs;
  c.start_epoch = start;
  c.seed = 1;
  return c;
}

Verdict gradients() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    auto inst = oracle::random_grad_instance(rng, 500 + k);
    const Gradients analytic = backward(inst.net, forward_pass(inst.net, inst.x), inst.t, inst.w);
    worst = std::max(worst, oracle::relative_error(analytic, oracle::fd_gradient(inst.net, inst.x, inst.t, inst.w)));
  }
  return {worst <= 1e-5, "worst relative error " + fmt(worst) + " over 100 instances"};
}

Verdict momentum_one() {
  const auto [train, test] = noisy_mixture(125, 0.4, 11);
  TrainConfig sat = base_train(Method::sat, 20, 5);
  sat.momentum = 1.0;
  TrainConfig ce = sat;
  ce.method = Method::ce;
  const auto a = trajectory(sat, train, test);
  const auto b = trajectory(ce, train, test);
  const bool same = !a.empty() && a == b;
  return {same, std::to_string(a.size()) + " SGD steps compared, " + (same ? "all identical" : "trajectories differ")};
}

Verdict random_labels() {
  ExperimentConfig c = preset(Experiment::random_labels);
  c.methods = {Method::sat};
  const auto outcomes = run_grid(c, 1);
  for (const auto &o : outcomes) {
    if (!o.ok()) {
      return {false, "run failed: " + o.error};
    }
  }
  const CellOutcome *m = median_by_test_accuracy(replicates(outcomes, Method::sat, 0));
  const CellData data = build_cell_data(c, 0, m->cell.seed);
  const auto counts = class_counts(data.train.labels, data.train.class_count);
  const auto majority = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  std::size_t agree = 0;
  for (std::size_t p : predict(m->result->net, data.test.features)) {
    agree += p == majority ? 1 : 0;
  }
  const double uni = m->summary.soft_label_uniformity;
  const double gap = m->summary.gen_gap;
  const bool pass = uni <= 0.05 && agree == data.test.size() && gap <= 0.02;
  return {pass, "median of 3 (" + m->cell.name + "): uniformity " + fmt(uni) + ", " + std::to_string(agree) + "/" +
                    std::to_string(data.test.size()) + " test predictions = class " + std::to_string(majority) +
                    ", gap " + fmt(gap)};
}

// Shared by the ordering and overfitting-shape criteria.
ExperimentConfig noise_config() {
  ExperimentConfig c = preset(Experiment::noise_sweep);
  c.noise_rates = {0.4};
  c.methods = {Method::ce, Method::sat, Method::sam};
  return c;
}

const std::vector<CellOutcome> &noise_outcomes() {
  static const std::vector<CellOutcome> outcomes = run_grid(noise_config(), 1);
  return outcomes;
}

Verdict noise_ordering() {
  const auto &outcomes = noise_outcomes();
  auto median = [&](Method m) {
    const CellOutcome *o = median_by_test_accuracy(replicates(outcomes, m, 0));
    return o ? o->summary.final_test_acc : std::numeric_limits<double>::quiet_NaN();
  };
  const double ce = median(Method::ce);
  const double sat = median(Method::sat);
  const double sam = median(Method::sam);
  const bool pass = sam >= sat + 0.02 && sat >= ce + 0.02;
  return {pass, "median clean test accuracy ce " + fmt(ce) + ", sat " + fmt(sat) + ", sam " + fmt(sam)};
}

Verdict overfit_shape() {
  const CellOutcome *ce = nullptr;
  const CellOutcome *sat = nullptr;
  for (const auto &o : noise_outcomes()) {
    if (o.cell.replication != 0 || !o.ok()) {
      continue;
    }
    if (o.cell.method == Method::ce) {
      ce = &o;
    } else if (o.cell.method == Method::sat) {
      sat = &o;
    }
  }
  if (!ce || !sat) {
    return {false, "replication 0 runs missing"};
  }
  const auto c = detect_overfit_shape(ce->result->record, 0.4, 4);
  const auto s = detect_overfit_shape(sat->result->record, 0.4, 4);
  const bool pass = c.exceeded_noise_ceiling && c.test_acc_declined && !s.test_acc_declined;
  return {pass, "ce peak clean train " + fmt(c.peak_clean_train) + " (ceiling 0.7), ce declined " +
                    (c.test_acc_declined ? "yes" : "no") + ", sat declined " + (s.test_acc_declined ? "yes" : "no")};
}

Verdict variance_optimality() {
  const auto rows = run_variance_lab(preset(Experiment::variance_lab));
  bool minimal = true;
  double worst = 0.0;
  for (const auto &r : rows) {
    minimal = minimal && rows[0].empirical_variance <= r.empirical_variance;
    worst = std::max(worst, std::abs(r.empirical_variance / r.closed_form_variance - 1.0));
  }
  return {minimal && worst <= 0.05 && rows.size() == 22,
          std::to_string(rows.size()) + " candidates, proportional minimal " + (minimal ? "yes" : "no") +
              ", worst relative gap to closed form " + fmt(worst)};
}

Verdict update_probability() {
  const double p = label_update_probability(1.0, 0.1);
  bool monotone = true;
  const std::vector<double> grid{0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
  for (std::size_t k = 1; k < grid.size(); ++k) {
    monotone = monotone && label_update_probability(grid[k], 0.1) < label_update_probability(grid[k - 1], 0.1);
  }
  const MixtureSpec spec{4, 4, 3.0, 1.0, 5};
  auto [train, test] =
      make_gaussian_mixture_split(spec, std::vector<std::size_t>(4, 500), std::vector<std::size_t>(4, 50));
  train = inject_noise(train, {NoiseKind::uniform, 0.4, 6});
  bool fractions_ok = true;
  std::string detail = "P(1, 0.1) = " + fmt(p, 12) + ", monotone " + (monotone ? "yes" : "no");
  for (double alpha : {0.2, 1.0}) {
    TrainConfig c = base_train(Method::sam, 51, 1);
    c.mix_alpha = alpha;
    c.hidden_layers = {8};
    std::size_t fired = 0;
    std::size_t draws = 0;
    TrainHooks hooks;
    hooks.on_mix = [&](double, bool any) {
      fired += any ? 1 : 0;
      ++draws;
    };
    run_sam(c, train, test, hooks);
    const double frac = static_cast<double>(fired) / static_cast<double>(draws);
    const double expect = label_update_probability(alpha, 0.1);
    fractions_ok = fractions_ok && draws == 100000 && std::abs(frac - expect) <= 0.02;
    detail += ", alpha " + fmt(alpha) + ": fired " + fmt(frac) + " vs " + fmt(expect) + " over " +
              std::to_string(draws) + " draws";
  }
  return {std::abs(p - 0.2) <= 1e-9 && monotone && fractions_ok, detail};
}

Verdict imbalance() {
  ExperimentConfig c = preset(Experiment::imbalance);
  c.imbalance_ratios = {9.0, 99.0};
  const auto outcomes = run_grid(c, 1);
  const std::size_t es = c.train.start_epoch;
  std::string detail;
  bool pass = true;
  for (std::size_t s = 0; s < c.imbalance_ratios.size(); ++s) {
    const CellOutcome *ce = median_by_test_accuracy(replicates(outcomes, Method::ce, s));
    const CellOutcome *sat = median_by_test_accuracy(replicates(outcomes, Method::sat, s));
    if (!ce || !sat) {
      return {false, "runs failed at ratio " + fmt(c.imbalance_ratios[s])};
    }
    const double ce_final = ce->summary.worst_class_acc;
    const double sat_final = sat->summary.worst_class_acc;
    const double ce_es = worst_at(ce->result->record, es);
    const double sat_es = worst_at(sat->result->record, es);
    detail += (s ? "; " : "") + std::string("ratio ") + fmt(c.imbalance_ratios[s]) + ": worst class at E_s ce " +
              fmt(ce_es) + " sat " + fmt(sat_es) + ", final ce " + fmt(ce_final) + " sat " + fmt(sat_final);
    if (c.imbalance_ratios[s] == 99.0) {
      pass = ce_final >= sat_final + 0.10 && sat_final < sat_es && std::abs(sat_es - ce_es) <= 0.05;
    }
  }
  return {pass, detail};
}

Verdict property_suites() {
  const std::string cmd = std::string("'") + CONFLAB_PROPERTIES_PATH + "' --gtest_brief=1 > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  return {ok, std::string("randomized invariant suites, 1000 cases each: ") + (ok ? "all passed" : "failures")};
}

Verdict mixup_reductions() {
  const auto [train, test] = noisy_mixture(125, 0.4, 12);
  TrainConfig sam = base_train(Method::sam, 10, 3);
  TrainConfig mixup = sam;
  mixup.method = Method::mixup;
  TrainConfig ce = sam;
  ce.method = Method::ce;
  TrainHooks closed;
  closed.gate_closed = true;
  closed.unit_weights = true;
  TrainHooks one;
  one.forced_lambda = 1.0;
  const auto a = trajectory(sam, train, test, closed);
  const auto b = trajectory(mixup, train, test);
  const auto d = trajectory(mixup, train, test, one);
  const auto e = trajectory(ce, train, test);
  const bool sam_ok = !a.empty() && a == b;
  const bool mix_ok = !d.empty() && d == e;
  return {sam_ok && mix_ok, std::string("sam(closed gate, unit weights) = mixup: ") + (sam_ok ? "yes" : "no") +
                                ", mixup(lambda = 1) = ce: " + (mix_ok ? "yes" : "no") + " over " +
                                std::to_string(a.size()) + " steps"};
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"1 gradient correctness", gradients},
      {"2 momentum 1 reproduces cross-entropy", momentum_one},
      {"3 random-label collapse", random_labels},
      {"4 noise-robustness ordering", noise_ordering},
      {"5 overfitting shape", overfit_shape},
      {"6 variance optimality", variance_optimality},
      {"7 update probability", update_probability},
      {"8 imbalance tradeoff", imbalance},
      {"9 invariant suites", property_suites},
      {"10 mixup reductions", mixup_reductions},
  };
  int failed = 0;
  for (const auto &[name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception &e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << name << "  [" << fmt(secs, 3) << " s]  " << v.detail
              << std::endl;
    failed += v.pass ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
