#pragma once

// Experiment grids behind the command-line tool: JSON configs, per-cell data
// construction and seeding, a bounded worker pool, and the result tables.
//
// A grid is methods x settings x replications. A setting is one noise rate
// (noise_sweep), one imbalance ratio (imbalance) or the single data condition
// of random_labels / single_run. Every method sees the same data and the same
// initial weights for a given (setting, replication), so methods are compared
// paired.

#include "conflab/config.hpp"
#include "conflab/data.hpp"
#include "conflab/metrics.hpp"
#include "conflab/random.hpp"
#include "conflab/theory.hpp"
#include "conflab/trainer.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace conflab {

enum class Experiment { single_run, noise_sweep, random_labels, imbalance, variance_lab };

inline std::string_view to_string(Experiment e) {
  switch (e) {
  case Experiment::single_run:
    return "single_run";
  case Experiment::noise_sweep:
    return "noise_sweep";
  case Experiment::random_labels:
    return "random_labels";
  case Experiment::imbalance:
    return "imbalance";
  case Experiment::variance_lab:
    return "variance_lab";
  }
  return "?";
}

inline Experiment parse_experiment(std::string_view name) {
  for (Experiment e : {Experiment::single_run, Experiment::noise_sweep, Experiment::random_labels,
                       Experiment::imbalance, Experiment::variance_lab}) {
    if (to_string(e) == name) {
      return e;
    }
  }
  throw std::invalid_argument("experiment: unknown experiment '" + std::string(name) + "'");
}

inline std::string_view to_string(NoiseKind k) {
  switch (k) {
  case NoiseKind::none:
    return "none";
  case NoiseKind::uniform:
    return "uniform";
  case NoiseKind::random_all:
    return "random_all";
  }
  return "?";
}

inline NoiseKind parse_noise_kind(std::string_view name) {
  for (NoiseKind k : {NoiseKind::none, NoiseKind::uniform, NoiseKind::random_all}) {
    if (to_string(k) == name) {
      return k;
    }
  }
  throw std::invalid_argument("data.noise.kind: unknown kind '" + std::string(name) + "'");
}

struct DataSpec {
  std::string source = "gaussian_mixture"; // gaussian_mixture | csv | idx
  std::size_t class_count = 4;
  std::size_t dim = 10;
  double separation = 3.0;
  double spread = 1.0;
  std::vector<std::size_t> train_counts{250, 250, 250, 250};
  std::vector<std::size_t> test_counts{1000, 1000, 1000, 1000};
  NoiseKind noise_kind = NoiseKind::none; // single_run and imbalance only
  double noise_rate = 0.0;
  std::string train_path; // csv: labelled rows; idx: image file
  std::string test_path;
  std::string train_labels_path; // idx only
  std::string test_labels_path;
  std::size_t majority_class = 0; // imbalance only
  std::size_t minority_class = 1;

  bool operator==(const DataSpec &) const = default;
};

struct VarianceSpec {
  std::vector<double> in_dist_probs{0.9, 0.9, 0.3, 0.3};
  std::size_t competitors = 20;
  std::size_t trials = 100000;
  double loss_variance = 1.0;
  double in_dist_loss_mean = 1.0;

  bool operator==(const VarianceSpec &) const = default;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::single_run;
  DataSpec data;
  std::vector<Method> methods{Method::sat};
  std::vector<double> noise_rates{0.4};
  std::vector<double> imbalance_ratios{9.0, 24.0, 99.0};
  std::size_t replications = 1;
  TrainConfig train; // train.seed is the base seed; train.method is unused
  VarianceSpec variance;
  std::string output_dir = "conflab_out";

  bool operator==(const ExperimentConfig &) const = default;
};

// ---------------------------------------------------------------- JSON

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json &j, const std::string &where, std::initializer_list<const char *> known) {
  if (!j.is_object()) {
    throw std::invalid_argument(where + ": expected an object");
  }
  for (const auto &[key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char *k) { return key == k; }) == known.end()) {
      throw std::invalid_argument(where + ": unknown field '" + key + "'");
    }
  }
}

template <class T> void read_field(const json &j, const std::string &where, const char *key, T &out) {
  if (!j.contains(key)) {
    return;
  }
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception &e) {
    throw std::invalid_argument(where + "." + key + ": " + e.what());
  }
}

} // namespace detail

inline nlohmann::json to_json(const TrainConfig &c) {
  nlohmann::json j;
  j["total_epochs"] = c.total_epochs;
  j["start_epoch"] = c.start_epoch;
  j["momentum"] = c.momentum;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["mix_alpha"] = c.mix_alpha;
  j["gamma"] = c.gamma;
  j["early_stop_epoch"] = c.early_stop_epoch ? nlohmann::json(*c.early_stop_epoch) : nlohmann::json(nullptr);
  j["hidden_layers"] = c.hidden_layers;
  j["sgd_momentum"] = c.sgd_momentum;
  j["weight_decay"] = c.weight_decay;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json &j, TrainConfig c = {}) {
  const std::string w = "train";
  detail::reject_unknown(j, w,
                         {"total_epochs", "start_epoch", "momentum", "learning_rate", "batch_size", "seed", "mix_alpha",
                          "gamma", "early_stop_epoch", "hidden_layers", "sgd_momentum", "weight_decay"});
  detail::read_field(j, w, "total_epochs", c.total_epochs);
  detail::read_field(j, w, "start_epoch", c.start_epoch);
  detail::read_field(j, w, "momentum", c.momentum);
  detail::read_field(j, w, "learning_rate", c.learning_rate);
  detail::read_field(j, w, "batch_size", c.batch_size);
  detail::read_field(j, w, "seed", c.seed);
  detail::read_field(j, w, "mix_alpha", c.mix_alpha);
  detail::read_field(j, w, "gamma", c.gamma);
  if (j.contains("early_stop_epoch")) {
    if (j["early_stop_epoch"].is_null()) {
      c.early_stop_epoch.reset();
    } else {
      std::size_t e = 0;
      detail::read_field(j, w, "early_stop_epoch", e);
      c.early_stop_epoch = e;
    }
  }
  detail::read_field(j, w, "hidden_layers", c.hidden_layers);
  detail::read_field(j, w, "sgd_momentum", c.sgd_momentum);
  detail::read_field(j, w, "weight_decay", c.weight_decay);
  return c;
}

inline nlohmann::json to_json(const DataSpec &d) {
  nlohmann::json j;
  j["source"] = d.source;
  j["class_count"] = d.class_count;
  j["dim"] = d.dim;
  j["separation"] = d.separation;
  j["spread"] = d.spread;
  j["train_counts"] = d.train_counts;
  j["test_counts"] = d.test_counts;
  j["noise"] = {{"kind", std::string(to_string(d.noise_kind))}, {"rate", d.noise_rate}};
  j["train_path"] = d.train_path;
  j["test_path"] = d.test_path;
  j["train_labels_path"] = d.train_labels_path;
  j["test_labels_path"] = d.test_labels_path;
  j["majority_class"] = d.majority_class;
  j["minority_class"] = d.minority_class;
  return j;
}

inline DataSpec data_spec_from_json(const nlohmann::json &j, DataSpec d = {}) {
  const std::string w = "data";
  detail::reject_unknown(j, w,
                         {"source", "class_count", "dim", "separation", "spread", "train_counts", "test_counts", "noise",
                          "train_path", "test_path", "train_labels_path", "test_labels_path", "majority_class",
                          "minority_class"});
  detail::read_field(j, w, "source", d.source);
  detail::read_field(j, w, "class_count", d.class_count);
  detail::read_field(j, w, "dim", d.dim);
  detail::read_field(j, w, "separation", d.separation);
  detail::read_field(j, w, "spread", d.spread);
  detail::read_field(j, w, "train_counts", d.train_counts);
  detail::read_field(j, w, "test_counts", d.test_counts);
  if (j.contains("noise")) {
    const auto &n = j["noise"];
    detail::reject_unknown(n, "data.noise", {"kind", "rate"});
    std::string kind(to_string(d.noise_kind));
    detail::read_field(n, "data.noise", "kind", kind);
    d.noise_kind = parse_noise_kind(kind);
    detail::read_field(n, "data.noise", "rate", d.noise_rate);
  }
  detail::read_field(j, w, "train_path", d.train_path);
  detail::read_field(j, w, "test_path", d.test_path);
  detail::read_field(j, w, "train_labels_path", d.train_labels_path);
  detail::read_field(j, w, "test_labels_path", d.test_labels_path);
  detail::read_field(j, w, "majority_class", d.majority_class);
  detail::read_field(j, w, "minority_class", d.minority_class);
  return d;
}

inline nlohmann::json to_json(const VarianceSpec &v) {
  return {{"in_dist_probs", v.in_dist_probs},
          {"competitors", v.competitors},
          {"trials", v.trials},
          {"loss_variance", v.loss_variance},
          {"in_dist_loss_mean", v.in_dist_loss_mean}};
}

inline VarianceSpec variance_spec_from_json(const nlohmann::json &j, VarianceSpec v = {}) {
  const std::string w = "variance";
  detail::reject_unknown(j, w, {"in_dist_probs", "competitors", "trials", "loss_variance", "in_dist_loss_mean"});
  detail::read_field(j, w, "in_dist_probs", v.in_dist_probs);
  detail::read_field(j, w, "competitors", v.competitors);
  detail::read_field(j, w, "trials", v.trials);
  detail::read_field(j, w, "loss_variance", v.loss_variance);
  detail::read_field(j, w, "in_dist_loss_mean", v.in_dist_loss_mean);
  return v;
}

inline nlohmann::json to_json(const ExperimentConfig &c) {
  nlohmann::json j;
  j["experiment"] = std::string(to_string(c.experiment));
  j["data"] = to_json(c.data);
  std::vector<std::string> methods;
  for (Method m : c.methods) {
    methods.emplace_back(to_string(m));
  }
  j["methods"] = methods;
  j["noise_rates"] = c.noise_rates;
  j["imbalance_ratios"] = c.imbalance_ratios;
  j["replications"] = c.replications;
  j["train"] = to_json(c.train);
  j["variance"] = to_json(c.variance);
  j["output_dir"] = c.output_dir;
  return j;
}

/// Missing fields keep their defaults; unknown fields and type mismatches throw
/// std::invalid_argument naming the field. Does not validate values.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json &j) {
  detail::reject_unknown(j, "config",
                         {"experiment", "data", "methods", "noise_rates", "imbalance_ratios", "replications", "train",
                          "variance", "output_dir"});
  ExperimentConfig c;
  if (j.contains("experiment")) {
    std::string name;
    detail::read_field(j, "config", "experiment", name);
    c.experiment = parse_experiment(name);
  }
  if (j.contains("data")) {
    c.data = data_spec_from_json(j["data"]);
  }
  if (j.contains("methods")) {
    std::vector<std::string> names;
    detail::read_field(j, "config", "methods", names);
    c.methods.clear();
    for (const auto &n : names) {
      try {
        c.methods.push_back(parse_method(n));
      } catch (const std::invalid_argument &e) {
        throw std::invalid_argument(std::string("methods: ") + e.what());
      }
    }
  }
  detail::read_field(j, "config", "noise_rates", c.noise_rates);
  detail::read_field(j, "config", "imbalance_ratios", c.imbalance_ratios);
  detail::read_field(j, "config", "replications", c.replications);
  if (j.contains("train")) {
    c.train = train_config_from_json(j["train"]);
  }
  if (j.contains("variance")) {
    c.variance = variance_spec_from_json(j["variance"]);
  }
  detail::read_field(j, "config", "output_dir", c.output_dir);
  return c;
}

inline ExperimentConfig parse_experiment_config(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return experiment_config_from_json(j);
}

inline std::string serialize(const ExperimentConfig &c) { return to_json(c).dump(2) + "\n"; }

/// Throws std::invalid_argument naming the first offending field.
inline void validate(const ExperimentConfig &c) {
  auto fail = [](const std::string &field, const std::string &why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (c.replications == 0) {
    fail("replications", "must be at least 1");
  }
  if (c.output_dir.empty()) {
    fail("output_dir", "must not be empty");
  }
  if (c.experiment == Experiment::variance_lab) {
    const auto &v = c.variance;
    if (v.in_dist_probs.empty()) {
      fail("variance.in_dist_probs", "must not be empty");
    }
    for (double p : v.in_dist_probs) {
      if (!(p > 0.0 && p <= 1.0)) {
        fail("variance.in_dist_probs", "entries must be in (0, 1]");
      }
    }
    if (v.trials < 10000) {
      fail("variance.trials", "must be at least 10000");
    }
    if (!(v.loss_variance > 0.0)) {
      fail("variance.loss_variance", "must be positive");
    }
    return;
  }
  if (c.methods.empty()) {
    fail("methods", "must not be empty");
  }
  validate(c.train);
  const auto &d = c.data;
  if (d.source == "gaussian_mixture") {
    if (d.class_count < 2) {
      fail("data.class_count", "must be at least 2");
    }
    if (d.dim == 0) {
      fail("data.dim", "must be positive");
    }
    if (d.train_counts.size() != d.class_count) {
      fail("data.train_counts", "needs one count per class");
    }
    if (d.test_counts.size() != d.class_count) {
      fail("data.test_counts", "needs one count per class");
    }
    if (!(d.spread > 0.0)) {
      fail("data.spread", "must be positive");
    }
  } else if (d.source == "csv" || d.source == "idx") {
    if (d.train_path.empty() || d.test_path.empty()) {
      fail("data.train_path", "file sources need train_path and test_path");
    }
    if (d.source == "idx" && (d.train_labels_path.empty() || d.test_labels_path.empty())) {
      fail("data.train_labels_path", "idx sources need train_labels_path and test_labels_path");
    }
  } else {
    fail("data.source", "must be gaussian_mixture, csv or idx");
  }
  if (!(d.noise_rate >= 0.0 && d.noise_rate <= 1.0)) {
    fail("data.noise.rate", "must be in [0, 1]");
  }
  if (c.experiment == Experiment::noise_sweep) {
    if (c.noise_rates.empty()) {
      fail("noise_rates", "must not be empty for noise_sweep");
    }
    for (double r : c.noise_rates) {
      if (!(r >= 0.0 && r <= 1.0)) {
        fail("noise_rates", "entries must be in [0, 1]");
      }
    }
  }
  if (c.experiment == Experiment::imbalance) {
    if (c.imbalance_ratios.empty()) {
      fail("imbalance_ratios", "must not be empty for imbalance");
    }
    for (double r : c.imbalance_ratios) {
      if (!(r >= 1.0)) {
        fail("imbalance_ratios", "entries must be >= 1");
      }
    }
    if (d.majority_class == d.minority_class) {
      fail("data.minority_class", "must differ from majority_class");
    }
  }
}

// ---------------------------------------------------------------- presets

/// The built-in desk-scale versions of the four experiments.
inline ExperimentConfig preset(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  c.output_dir = "conflab_out";
  c.train.seed = 1;
  c.train.total_epochs = 200;
  c.train.start_epoch = 60;
  c.train.learning_rate = 0.01;
  c.train.sgd_momentum = 0.9;
  c.train.weight_decay = 2e-3;
  switch (e) {
  case Experiment::single_run:
    c.methods = {Method::sat};
    c.data.noise_kind = NoiseKind::uniform;
    c.data.noise_rate = 0.4;
    break;
  case Experiment::noise_sweep:
    c.methods = {Method::ce, Method::ce_early_stop, Method::sat, Method::mixup, Method::sam};
    c.noise_rates = {0.2, 0.4, 0.6, 0.8};
    c.replications = 3;
    break;
  case Experiment::random_labels:
    c.methods = {Method::ce, Method::sat};
    c.data.train_counts = {500, 500, 500, 500};
    c.data.test_counts = {500, 500, 500, 500};
    c.replications = 3;
    c.train.total_epochs = 100;
    c.train.start_epoch = 20;
    c.train.weight_decay = 1e-2;
    break;
  case Experiment::imbalance:
    c.methods = {Method::ce, Method::sat};
    c.data.class_count = 2;
    c.data.train_counts = {900, 900};
    c.data.test_counts = {500, 500};
    c.imbalance_ratios = {9.0, 24.0, 99.0};
    break;
  case Experiment::variance_lab:
    c.methods = {};
    break;
  }
  return c;
}

// ---------------------------------------------------------------- cells

struct CellData {
  Dataset train;
  Dataset test;       // clean labels
  Dataset noisy_test; // test relabelled with the training noise model
};

struct CellSpec {
  Method method = Method::sat;
  std::size_t setting = 0;
  std::size_t replication = 0;
  std::size_t cell_index = 0; // shared by every method on the same (setting, replication)
  std::string name;
  std::uint64_t seed = 0;
};

namespace detail {

inline constexpr std::uint64_t kMeansStream = 100;
inline constexpr std::uint64_t kTrainNoiseStream = 101;
inline constexpr std::uint64_t kTestNoiseStream = 102;
inline constexpr std::uint64_t kImbalanceStream = 103;

inline std::vector<double> settings_of(const ExperimentConfig &c) {
  switch (c.experiment) {
  case Experiment::noise_sweep:
    return c.noise_rates;
  case Experiment::imbalance:
    return c.imbalance_ratios;
  default:
    return {0.0};
  }
}

inline std::string cell_name(const ExperimentConfig &c, std::size_t setting, std::size_t replication) {
  const std::string rep = "rep" + std::to_string(replication);
  switch (c.experiment) {
  case Experiment::noise_sweep:
    return "noise" + format_double(c.noise_rates[setting]) + "-" + rep;
  case Experiment::imbalance:
    return "ratio" + format_double(c.imbalance_ratios[setting]) + "-" + rep;
  default:
    return rep;
  }
}

inline NoiseSpec cell_noise(const ExperimentConfig &c, std::size_t setting) {
  switch (c.experiment) {
  case Experiment::noise_sweep:
    return {NoiseKind::uniform, c.noise_rates[setting], 0};
  case Experiment::random_labels:
    return {NoiseKind::random_all, 1.0, 0};
  default:
    return {c.data.noise_kind, c.data.noise_rate, 0};
  }
}

} // namespace detail

inline std::uint64_t cell_seed(const ExperimentConfig &c, std::size_t cell_index) {
  return derive_seed(c.train.seed, cell_index);
}

/// Loads or generates the base train/test pair before noise and imbalance.
inline std::pair<Dataset, Dataset> base_data(const DataSpec &d, std::uint64_t seed) {
  if (d.source == "csv") {
    Dataset train = load_csv(d.train_path);
    Dataset test = load_csv(d.test_path, train.class_count);
    train.class_count = std::max(train.class_count, test.class_count);
    test.class_count = train.class_count;
    test.split = Split::test;
    return {train, test};
  }
  if (d.source == "idx") {
    Dataset train = load_idx(d.train_path, d.train_labels_path, d.class_count);
    Dataset test = load_idx(d.test_path, d.test_labels_path, d.class_count);
    test.split = Split::test;
    return {train, test};
  }
  const MixtureSpec spec{d.class_count, d.dim, d.separation, d.spread, derive_seed(seed, detail::kMeansStream)};
  return make_gaussian_mixture_split(spec, d.train_counts, d.test_counts);
}

inline CellData build_cell_data(const ExperimentConfig &c, std::size_t setting, std::uint64_t seed) {
  auto [train, test] = base_data(c.data, seed);
  if (c.experiment == Experiment::imbalance) {
    train = make_imbalanced(train, c.data.majority_class, c.data.minority_class, c.imbalance_ratios.at(setting),
                            derive_seed(seed, detail::kImbalanceStream));
    test = select_two_classes(test, c.data.majority_class, c.data.minority_class);
  }
  NoiseSpec noise = detail::cell_noise(c, setting);
  noise.seed = derive_seed(seed, detail::kTrainNoiseStream);
  train = inject_noise(train, noise);
  noise.seed = derive_seed(seed, detail::kTestNoiseStream);
  Dataset noisy_test = inject_noise(test, noise);
  return {std::move(train), std::move(test), std::move(noisy_test)};
}

/// Cells in output order: setting, then replication, then method.
inline std::vector<CellSpec> plan_cells(const ExperimentConfig &c) {
  std::vector<CellSpec> cells;
  if (c.experiment == Experiment::variance_lab) {
    return cells;
  }
  const auto settings = detail::settings_of(c);
  for (std::size_t s = 0; s < settings.size(); ++s) {
    for (std::size_t r = 0; r < c.replications; ++r) {
      const std::size_t index = s * c.replications + r;
      for (Method m : c.methods) {
        cells.push_back({m, s, r, index, detail::cell_name(c, s, r), cell_seed(c, index)});
      }
    }
  }
  return cells;
}

inline TrainConfig cell_train_config(const ExperimentConfig &c, const CellSpec &cell) {
  TrainConfig t = c.train;
  t.method = cell.method;
  t.seed = cell.seed;
  if (cell.method == Method::ce_early_stop && !t.early_stop_epoch) {
    t.early_stop_epoch = t.start_epoch;
  }
  if (cell.method != Method::ce_early_stop) {
    t.early_stop_epoch.reset();
  }
  return t;
}

struct RunSummary {
  double final_test_acc = 0.0; // clean test labels
  double train_acc_noisy = 0.0;
  double train_acc_clean = 0.0;
  double noisy_test_acc = 0.0;
  double gen_gap = 0.0; // noisy train vs noisy test
  double worst_class_acc = 0.0;
  double soft_label_uniformity = 0.0;
  double best_test_acc = 0.0;
};

inline nlohmann::json to_json(const RunSummary &s) {
  return {{"final_test_acc", s.final_test_acc},   {"gen_gap", s.gen_gap},
          {"worst_class_acc", s.worst_class_acc}, {"soft_label_uniformity", s.soft_label_uniformity},
          {"train_acc_noisy", s.train_acc_noisy}, {"train_acc_clean", s.train_acc_clean},
          {"noisy_test_acc", s.noisy_test_acc},   {"best_test_acc", s.best_test_acc}};
}

inline RunSummary summarize(const TrainResult &result, const CellData &data) {
  const EpochMetrics &last = result.record.final();
  RunSummary s;
  s.final_test_acc = last.test_acc;
  s.train_acc_noisy = last.train_acc_noisy;
  s.train_acc_clean = last.train_acc_clean;
  s.noisy_test_acc = accuracy(predict(result.net, data.noisy_test.features), data.noisy_test.labels);
  s.gen_gap = generalization_gap(s.train_acc_noisy, s.noisy_test_acc);
  s.worst_class_acc = worst_class_accuracy(last.per_class_test_acc);
  s.soft_label_uniformity = last.soft_label_uniformity;
  for (const auto &e : result.record.epochs) {
    s.best_test_acc = std::max(s.best_test_acc, e.test_acc);
  }
  return s;
}

struct CellOutcome {
  CellSpec cell;
  std::optional<TrainResult> result;
  RunSummary summary;
  std::string error; // empty on success

  bool ok() const { return error.empty(); }
};

inline CellOutcome run_cell(const ExperimentConfig &c, const CellSpec &cell) {
  CellOutcome out{cell, std::nullopt, {}, {}};
  try {
    const CellData data = build_cell_data(c, cell.setting, cell.seed);
    out.result = run_method(cell_train_config(c, cell), data.train, data.test);
    out.summary = summarize(*out.result, data);
  } catch (const std::exception &e) {
    out.result.reset();
    out.error = e.what();
  }
  return out;
}

/// Runs every cell on up to `jobs` threads. Results come back in plan order
/// and do not depend on `jobs`.
inline std::vector<CellOutcome> run_grid(const ExperimentConfig &c, std::size_t jobs = 1) {
  const auto cells = plan_cells(c);
  std::vector<CellOutcome> outcomes(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      outcomes[i] = run_cell(c, cells[i]);
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(cells.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto &t : pool) {
    t.join();
  }
  return outcomes;
}

/// Median run keyed on final clean-test accuracy; with an even count the lower
/// of the two middle runs. Failed cells are skipped; nullptr if none succeeded.
inline const CellOutcome *median_by_test_accuracy(std::vector<const CellOutcome *> runs) {
  std::erase_if(runs, [](const CellOutcome *o) { return !o->ok(); });
  if (runs.empty()) {
    return nullptr;
  }
  std::stable_sort(runs.begin(), runs.end(), [](const CellOutcome *a, const CellOutcome *b) {
    return a->summary.final_test_acc < b->summary.final_test_acc;
  });
  return runs[(runs.size() - 1) / 2];
}

/// The replications of one (method, setting).
inline std::vector<const CellOutcome *> replicates(const std::vector<CellOutcome> &outcomes, Method m,
                                                  std::size_t setting) {
  std::vector<const CellOutcome *> out;
  for (const auto &o : outcomes) {
    if (o.cell.method == m && o.cell.setting == setting) {
      out.push_back(&o);
    }
  }
  return out;
}

// ---------------------------------------------------------------- tables

namespace detail {

inline std::string cell_value(const CellOutcome *o, double RunSummary::*field) {
  return o ? format_double(o->summary.*field) : "";
}

} // namespace detail

/// noise_rate,<method>,... with the median clean-test accuracy per cell.
inline std::string noise_sweep_table(const ExperimentConfig &c, const std::vector<CellOutcome> &outcomes) {
  std::string out = "noise_rate";
  for (Method m : c.methods) {
    out += ",";
    out += to_string(m);
  }
  out += "\n";
  for (std::size_t s = 0; s < c.noise_rates.size(); ++s) {
    out += format_double(c.noise_rates[s]);
    for (Method m : c.methods) {
      out += "," + detail::cell_value(median_by_test_accuracy(replicates(outcomes, m, s)),
                                      &RunSummary::final_test_acc);
    }
    out += "\n";
  }
  return out;
}

/// One row per method: train and test accuracy on the random labels, their gap
/// and the final soft-label uniformity, from the median replication.
inline std::string random_labels_table(const ExperimentConfig &c, const std::vector<CellOutcome> &outcomes) {
  std::string out = "method,train_acc,test_acc,gen_gap,soft_label_uniformity\n";
  for (Method m : c.methods) {
    const CellOutcome *o = median_by_test_accuracy(replicates(outcomes, m, 0));
    out += std::string(to_string(m)) + "," + detail::cell_value(o, &RunSummary::train_acc_noisy) + "," +
           detail::cell_value(o, &RunSummary::noisy_test_acc) + "," + detail::cell_value(o, &RunSummary::gen_gap) +
           "," + detail::cell_value(o, &RunSummary::soft_label_uniformity) + "\n";
  }
  return out;
}

inline std::string imbalance_table(const ExperimentConfig &c, const std::vector<CellOutcome> &outcomes) {
  std::string out = "method,ratio,worst_class_acc_at_start_epoch,final_worst_class_acc\n";
  for (Method m : c.methods) {
    for (std::size_t s = 0; s < c.imbalance_ratios.size(); ++s) {
      const CellOutcome *o = median_by_test_accuracy(replicates(outcomes, m, s));
      std::string at_start;
      if (o) {
        const auto &epochs = o->result->record.epochs;
        const std::size_t k = std::min(c.train.start_epoch, epochs.size()) - 1;
        at_start = format_double(worst_class_accuracy(epochs[k].per_class_test_acc));
      }
      out += std::string(to_string(m)) + "," + format_double(c.imbalance_ratios[s]) + "," + at_start + "," +
             detail::cell_value(o, &RunSummary::worst_class_acc) + "\n";
    }
  }
  return out;
}

/// gnuplot data: one indexed block per (method, ratio), columns epoch and
/// worst-class test accuracy, from the median replication.
inline std::string imbalance_curves(const ExperimentConfig &c, const std::vector<CellOutcome> &outcomes) {
  std::string out;
  bool first = true;
  for (Method m : c.methods) {
    for (std::size_t s = 0; s < c.imbalance_ratios.size(); ++s) {
      const CellOutcome *o = median_by_test_accuracy(replicates(outcomes, m, s));
      if (!first) {
        out += "\n\n";
      }
      first = false;
      out += "# method=" + std::string(to_string(m)) + " ratio=" + format_double(c.imbalance_ratios[s]) + "\n";
      out += "# epoch worst_class_acc\n";
      if (!o) {
        continue;
      }
      for (const auto &e : o->result->record.epochs) {
        out += std::to_string(e.epoch) + " " + format_double(worst_class_accuracy(e.per_class_test_acc)) + "\n";
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- variance lab

/// Candidate 0 is q proportional to p, candidate 1 is uniform, the rest are
/// random positive unit vectors.
inline std::vector<std::vector<double>> variance_candidates(const VarianceSpec &v, std::uint64_t seed) {
  std::vector<std::vector<double>> qs;
  qs.push_back(optimal_weights(v.in_dist_probs));
  const std::size_t n = v.in_dist_probs.size();
  qs.emplace_back(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < v.competitors; ++k) {
    std::vector<double> q(n);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double &x : q) {
        x = std::abs(gauss(rng));
        norm += x * x;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12 || *std::min_element(q.begin(), q.end()) <= 0.0);
    for (double &x : q) {
      x /= norm;
    }
    qs.push_back(q);
  }
  return qs;
}

inline std::vector<VarianceRow> run_variance_lab(const ExperimentConfig &c) {
  const auto &v = c.variance;
  WeightingScenario scenario;
  scenario.in_dist_probs = v.in_dist_probs;
  scenario.per_point_loss_variance = v.loss_variance;
  scenario.in_dist_loss_mean = v.in_dist_loss_mean;
  const auto candidates = variance_candidates(v, derive_seed(c.train.seed, 0));
  return variance_sweep(scenario, candidates, v.trials, derive_seed(c.train.seed, 1));
}

inline std::string variance_table(const std::vector<VarianceRow> &rows) {
  std::string out = "candidate,q,empirical_mean,empirical_variance,closed_form_variance,relative_error\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto &r = rows[k];
    std::string q;
    for (std::size_t i = 0; i < r.q.size(); ++i) {
      q += (i ? ";" : "") + format_double(r.q[i]);
    }
    const std::string label = k == 0 ? "proportional" : (k == 1 ? "uniform" : "random" + std::to_string(k - 2));
    out += label + "," + q + "," + format_double(r.empirical_mean) + "," + format_double(r.empirical_variance) + "," +
           format_double(r.closed_form_variance) + "," +
           format_double(std::abs(r.empirical_variance - r.closed_form_variance) / r.closed_form_variance) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- files

inline void write_text(const std::filesystem::path &path, const std::string &text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("cannot write '" + path.string() + "'");
  }
  f << text;
  if (!f) {
    throw std::runtime_error("write failed for '" + path.string() + "'");
  }
}

inline std::filesystem::path cell_dir(const std::filesystem::path &root, const ExperimentConfig &c,
                                      const CellSpec &cell) {
  return root / std::string(to_string(c.experiment)) / std::string(to_string(cell.method)) / cell.name;
}

/// epochs.csv and summary.json for a finished cell, error.txt for a failed one.
inline void write_cell(const std::filesystem::path &root, const ExperimentConfig &c, const CellOutcome &o) {
  const auto dir = cell_dir(root, c, o.cell);
  if (!o.ok()) {
    write_text(dir / "error.txt", o.error + "\n");
    return;
  }
  write_text(dir / "epochs.csv", to_csv(o.result->record));
  nlohmann::json j = to_json(o.summary);
  j["method"] = std::string(to_string(o.cell.method));
  j["cell"] = o.cell.name;
  j["seed"] = o.cell.seed;
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

/// Median-replication summaries, one per (method, setting), next to the cells.
inline void write_medians(const std::filesystem::path &root, const ExperimentConfig &c,
                          const std::vector<CellOutcome> &outcomes) {
  const std::size_t settings = detail::settings_of(c).size();
  for (Method m : c.methods) {
    for (std::size_t s = 0; s < settings; ++s) {
      const CellOutcome *o = median_by_test_accuracy(replicates(outcomes, m, s));
      if (!o) {
        continue;
      }
      std::string name = detail::cell_name(c, s, 0);
      name = name.substr(0, name.size() - 4); // drop "rep0"
      nlohmann::json j = to_json(o->summary);
      j["method"] = std::string(to_string(m));
      j["median_of"] = replicates(outcomes, m, s).size();
      j["median_cell"] = o->cell.name;
      const auto base = root / std::string(to_string(c.experiment)) / std::string(to_string(m));
      write_text(base / ((name.empty() ? std::string() : name) + "median_summary.json"), j.dump(2) + "\n");
    }
  }
}

} // namespace conflab
