#pragma once

// Accuracy, generalization gap, worst-class accuracy, soft-label uniformity,
// calibration error, overfit-curve detection, and the per-epoch RunRecord
// with its CSV / JSON forms.

#include "conflab/data.hpp"
#include "conflab/nn.hpp"
#include "conflab/soft_labels.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace conflab {

enum class LabelSet { noisy, clean };

inline const std::vector<std::size_t> &label_set(const Dataset &ds, LabelSet against) {
  if (against == LabelSet::clean) {
    if (!ds.clean_labels) {
      throw std::invalid_argument("clean accuracy requested but dataset has no clean labels");
    }
    return *ds.clean_labels;
  }
  return ds.labels;
}

inline std::vector<std::size_t> predict(const Network &net, const Matrix &inputs) {
  const Matrix probs = forward(net, inputs);
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    out[i] = argmax(probs.row(i));
  }
  return out;
}

inline double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  detail::require(predictions.size() == labels.size() && !labels.empty(), "prediction/label length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += predictions[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double accuracy(const Network &net, const Dataset &ds, LabelSet against) {
  const auto &labels = label_set(ds, against);
  return accuracy(predict(net, ds.features), labels);
}

/// Accuracy per class over `labels`; NaN for classes with no examples.
inline std::vector<double> per_class_accuracy(std::span<const std::size_t> predictions,
                                              std::span<const std::size_t> labels, std::size_t class_count) {
  std::vector<double> hits(class_count, 0.0);
  std::vector<double> totals(class_count, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    totals.at(labels[i]) += 1.0;
    if (predictions[i] == labels[i]) {
      hits[labels[i]] += 1.0;
    }
  }
  std::vector<double> out(class_count, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < class_count; ++k) {
    if (totals[k] > 0.0) {
      out[k] = hits[k] / totals[k];
    }
  }
  return out;
}

/// |train error - test error|.
inline double generalization_gap(double train_metric, double test_metric) {
  return std::abs((1.0 - train_metric) - (1.0 - test_metric));
}

/// Minimum over classes that have test examples (NaN entries are skipped).
inline double worst_class_accuracy(std::span<const double> per_class) {
  double worst = std::numeric_limits<double>::infinity();
  for (double a : per_class) {
    if (!std::isnan(a)) {
      worst = std::min(worst, a);
    }
  }
  if (std::isinf(worst)) {
    throw std::invalid_argument("worst_class_accuracy: no class has test examples");
  }
  return worst;
}

/// max_i || t_i - uniform ||_inf
inline double soft_label_uniformity(const Matrix &soft_labels) {
  const double u = 1.0 / static_cast<double>(soft_labels.cols());
  double worst = 0.0;
  for (double v : soft_labels.data()) {
    worst = std::max(worst, std::abs(v - u));
  }
  return worst;
}

inline double soft_label_uniformity(const SoftLabelStore &store) { return soft_label_uniformity(store.labels); }

/// Equal-width confidence bins over the max-probability prediction.
inline double expected_calibration_error(const Matrix &probs, std::span<const std::size_t> labels,
                                         std::size_t bin_count) {
  detail::require(bin_count >= 1, "bin_count must be at least 1");
  detail::require(labels.size() == probs.rows() && !labels.empty(), "probs/labels length mismatch");
  std::vector<double> conf_sum(bin_count, 0.0);
  std::vector<double> hit_sum(bin_count, 0.0);
  std::vector<double> count(bin_count, 0.0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    const std::size_t pred = argmax(row);
    const double conf = row[pred];
    auto bin = static_cast<std::size_t>(conf * static_cast<double>(bin_count));
    bin = std::min(bin, bin_count - 1);
    conf_sum[bin] += conf;
    hit_sum[bin] += pred == labels[i] ? 1.0 : 0.0;
    count[bin] += 1.0;
  }
  const double n = static_cast<double>(labels.size());
  double ece = 0.0;
  for (std::size_t b = 0; b < bin_count; ++b) {
    if (count[b] > 0.0) {
      ece += std::abs(conf_sum[b] - hit_sum[b]) / n;
    }
  }
  return ece;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_acc_noisy = 0.0;
  double train_acc_clean = 0.0;
  double test_acc = 0.0;
  double mean_weight = 1.0;
  double min_weight = 1.0;
  double soft_label_uniformity = 0.0;
  std::vector<double> per_class_test_acc;
  std::size_t labels_changed_count = 0;
  // Number of soft-label update operations applied during the epoch.
  std::size_t label_updates = 0;
  double train_loss = 0.0;
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;

  bool empty() const noexcept { return epochs.empty(); }
  const EpochMetrics &final() const { return epochs.at(epochs.size() - 1); }
};

inline bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline bool operator==(const EpochMetrics &a, const EpochMetrics &b) {
  if (a.per_class_test_acc.size() != b.per_class_test_acc.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.per_class_test_acc.size(); ++k) {
    if (!same_value(a.per_class_test_acc[k], b.per_class_test_acc[k])) {
      return false;
    }
  }
  return a.epoch == b.epoch && a.train_acc_noisy == b.train_acc_noisy && a.train_acc_clean == b.train_acc_clean &&
         a.test_acc == b.test_acc && a.mean_weight == b.mean_weight && a.min_weight == b.min_weight &&
         a.soft_label_uniformity == b.soft_label_uniformity && a.labels_changed_count == b.labels_changed_count &&
         a.label_updates == b.label_updates && a.train_loss == b.train_loss;
}

inline bool operator==(const RunRecord &a, const RunRecord &b) { return a.epochs == b.epochs; }

struct OverfitShape {
  double peak_clean_train = 0.0;
  bool exceeded_noise_ceiling = false;
  bool test_acc_declined = false;
};

/// Clean-train accuracy climbing above the fraction of correct labels, and
/// test accuracy finishing below its peak.
inline OverfitShape detect_overfit_shape(const RunRecord &record, double noise_rate, std::size_t class_count,
                                         double margin = 0.02) {
  detail::require(!record.empty(), "run record is empty");
  detail::require(class_count >= 1, "class_count must be positive");
  const double c = static_cast<double>(class_count);
  const double ceiling = 1.0 - noise_rate * (c - 1.0) / c;
  OverfitShape shape;
  double best_test = 0.0;
  for (const auto &e : record.epochs) {
    shape.peak_clean_train = std::max(shape.peak_clean_train, e.train_acc_clean);
    best_test = std::max(best_test, e.test_acc);
  }
  shape.exceeded_noise_ceiling = shape.peak_clean_train > ceiling + margin;
  shape.test_acc_declined = record.final().test_acc < best_test - margin;
  return shape;
}

// ---------------------------------------------------------------------------
// serialization

inline constexpr const char *kRunRecordCsvHeader =
    "epoch,train_acc_noisy,train_acc_clean,test_acc,mean_weight,min_weight,soft_label_uniformity,"
    "per_class_test_acc,labels_changed_count,label_updates,train_loss";

inline std::string to_csv(const RunRecord &record) {
  std::string out = kRunRecordCsvHeader;
  out += '\n';
  for (const auto &e : record.epochs) {
    out += std::to_string(e.epoch) + ',' + format_double(e.train_acc_noisy) + ',' + format_double(e.train_acc_clean) +
           ',' + format_double(e.test_acc) + ',' + format_double(e.mean_weight) + ',' + format_double(e.min_weight) +
           ',' + format_double(e.soft_label_uniformity) + ',';
    for (std::size_t k = 0; k < e.per_class_test_acc.size(); ++k) {
      if (k > 0) {
        out += ';';
      }
      out += std::isnan(e.per_class_test_acc[k]) ? std::string("nan") : format_double(e.per_class_test_acc[k]);
    }
    out += ',' + std::to_string(e.labels_changed_count) + ',' + std::to_string(e.label_updates) + ',' +
           format_double(e.train_loss) + '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string &s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("bad number '" + s + "'");
  }
  return v;
}

inline std::size_t parse_size(const std::string &s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("bad integer '" + s + "'");
  }
  return v;
}

} // namespace detail

inline RunRecord parse_run_record_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRunRecordCsvHeader) {
    throw std::runtime_error("run record csv: missing or unexpected header");
  }
  RunRecord record;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 11) {
      throw std::runtime_error("run record csv row " + std::to_string(line_no) + ": expected 11 fields");
    }
    EpochMetrics e;
    e.epoch = detail::parse_size(f[0]);
    e.train_acc_noisy = detail::parse_double(f[1]);
    e.train_acc_clean = detail::parse_double(f[2]);
    e.test_acc = detail::parse_double(f[3]);
    e.mean_weight = detail::parse_double(f[4]);
    e.min_weight = detail::parse_double(f[5]);
    e.soft_label_uniformity = detail::parse_double(f[6]);
    if (!f[7].empty()) {
      for (const auto &v : detail::split(f[7], ';')) {
        e.per_class_test_acc.push_back(v.empty() ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double(v));
      }
    }
    e.labels_changed_count = detail::parse_size(f[8]);
    e.label_updates = detail::parse_size(f[9]);
    e.train_loss = detail::parse_double(f[10]);
    record.epochs.push_back(std::move(e));
  }
  return record;
}

inline nlohmann::json to_json(const EpochMetrics &e) {
  nlohmann::json per_class = nlohmann::json::array();
  for (double a : e.per_class_test_acc) {
    per_class.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  }
  return {{"epoch", e.epoch},
          {"train_acc_noisy", e.train_acc_noisy},
          {"train_acc_clean", e.train_acc_clean},
          {"test_acc", e.test_acc},
          {"mean_weight", e.mean_weight},
          {"min_weight", e.min_weight},
          {"soft_label_uniformity", e.soft_label_uniformity},
          {"per_class_test_acc", per_class},
          {"labels_changed_count", e.labels_changed_count},
          {"label_updates", e.label_updates},
          {"train_loss", e.train_loss}};
}

inline nlohmann::json to_json(const RunRecord &record) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto &e : record.epochs) {
    arr.push_back(to_json(e));
  }
  return {{"epochs", arr}};
}

inline RunRecord run_record_from_json(const nlohmann::json &j) {
  RunRecord record;
  for (const auto &item : j.at("epochs")) {
    EpochMetrics e;
    e.epoch = item.at("epoch").get<std::size_t>();
    e.train_acc_noisy = item.at("train_acc_noisy").get<double>();
    e.train_acc_clean = item.at("train_acc_clean").get<double>();
    e.test_acc = item.at("test_acc").get<double>();
    e.mean_weight = item.at("mean_weight").get<double>();
    e.min_weight = item.at("min_weight").get<double>();
    e.soft_label_uniformity = item.at("soft_label_uniformity").get<double>();
    for (const auto &a : item.at("per_class_test_acc")) {
      e.per_class_test_acc.push_back(a.is_null() ? std::numeric_limits<double>::quiet_NaN() : a.get<double>());
    }
    e.labels_changed_count = item.at("labels_changed_count").get<std::size_t>();
    e.label_updates = item.at("label_updates").get<std::size_t>();
    e.train_loss = item.at("train_loss").get<double>();
    record.epochs.push_back(std::move(e));
  }
  return record;
}

} // namespace conflab
