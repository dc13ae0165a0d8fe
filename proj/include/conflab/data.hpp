#pragma once

// Datasets: synthetic Gaussian mixtures, label-noise injection, two-class
// imbalance subsampling, and CSV / IDX readers.

#include "conflab/nn.hpp"
#include "conflab/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace conflab {

enum class Split { train, test };

struct Dataset {
  Matrix features;                                // n x dim
  std::vector<std::size_t> labels;                // possibly noisy
  std::optional<std::vector<std::size_t>> clean_labels;
  std::size_t class_count = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  bool operator==(const Dataset &) const = default;
};

enum class NoiseKind { none, uniform, random_all };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument when a Dataset invariant is broken.
inline void validate(const Dataset &ds) {
  detail::require(ds.size() > 0, "dataset is empty");
  detail::require(ds.dim() > 0, "dataset has zero feature dimension");
  detail::require(ds.features.rows() == ds.size(), "feature rows must equal label count");
  for (std::size_t y : ds.labels) {
    detail::require(y < ds.class_count, "label out of range");
  }
  if (ds.clean_labels) {
    detail::require(ds.clean_labels->size() == ds.size(), "clean_labels length must equal n");
    for (std::size_t y : *ds.clean_labels) {
      detail::require(y < ds.class_count, "clean label out of range");
    }
  }
}

inline std::vector<std::size_t> class_counts(std::span<const std::size_t> labels, std::size_t class_count) {
  std::vector<std::size_t> counts(class_count, 0);
  for (std::size_t y : labels) {
    ++counts.at(y);
  }
  return counts;
}

/// Isotropic Gaussian mixture parameters. Class means are random directions
/// scaled to norm `separation`, drawn from `seed`; samples use their own seed
/// so train and test can share the same means.
struct MixtureSpec {
  std::size_t class_count = 2;
  std::size_t dim = 2;
  double separation = 1.0;
  double spread = 1.0;
  std::uint64_t seed = 0;
};

inline Matrix mixture_means(const MixtureSpec &spec) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix means(spec.class_count, spec.dim);
  for (std::size_t k = 0; k < spec.class_count; ++k) {
    auto row = means.row(k);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double &v : row) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (double &v : row) {
      v *= spec.separation / norm;
    }
  }
  return means;
}

inline Dataset sample_mixture(const MixtureSpec &spec, std::span<const std::size_t> per_class_counts,
                              std::uint64_t sample_seed, Split split = Split::train) {
  if (spec.class_count < 2) {
    throw std::invalid_argument("class_count must be at least 2");
  }
  detail::require(spec.dim > 0, "dim must be positive");
  detail::require(per_class_counts.size() == spec.class_count, "per_class_counts length must equal class_count");
  detail::require(std::count_if(per_class_counts.begin(), per_class_counts.end(),
                                [](std::size_t c) { return c > 0; }) >= 2,
                  "at least two classes need a positive count");
  detail::require(spec.separation > 0.0 && spec.spread > 0.0, "separation and spread must be positive");

  const Matrix means = mixture_means(spec);
  const std::size_t n = std::accumulate(per_class_counts.begin(), per_class_counts.end(), std::size_t{0});
  std::vector<std::size_t> order_labels;
  order_labels.reserve(n);
  for (std::size_t k = 0; k < spec.class_count; ++k) {
    order_labels.insert(order_labels.end(), per_class_counts[k], k);
  }
  std::mt19937_64 rng(sample_seed);
  std::shuffle(order_labels.begin(), order_labels.end(), rng);

  std::normal_distribution<double> gauss(0.0, spec.spread);
  Dataset ds;
  ds.features = Matrix(n, spec.dim);
  ds.class_count = spec.class_count;
  ds.split = split;
  ds.labels = order_labels;
  for (std::size_t i = 0; i < n; ++i) {
    auto mean = means.row(order_labels[i]);
    auto row = ds.features.row(i);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      row[d] = mean[d] + gauss(rng);
    }
  }
  ds.clean_labels = ds.labels;
  return ds;
}

inline Dataset make_gaussian_mixture(std::size_t class_count, std::size_t dim,
                                     std::span<const std::size_t> per_class_counts, double separation, double spread,
                                     std::uint64_t seed) {
  const MixtureSpec spec{class_count, dim, separation, spread, seed};
  return sample_mixture(spec, per_class_counts, derive_seed(seed, 1));
}

/// Independent train and test draws from the same mixture.
inline std::pair<Dataset, Dataset> make_gaussian_mixture_split(const MixtureSpec &spec,
                                                               std::span<const std::size_t> train_counts,
                                                               std::span<const std::size_t> test_counts) {
  return {sample_mixture(spec, train_counts, derive_seed(spec.seed, 1), Split::train),
          sample_mixture(spec, test_counts, derive_seed(spec.seed, 2), Split::test)};
}

/// Replaces labels with uniform draws over all classes: each example with
/// probability `rate` (uniform) or every example (random_all). The pre-noise
/// labels are kept in clean_labels.
inline Dataset inject_noise(Dataset ds, const NoiseSpec &spec) {
  detail::require(spec.rate >= 0.0 && spec.rate <= 1.0, "noise rate must be in [0, 1]");
  if (!ds.clean_labels) {
    ds.clean_labels = ds.labels;
  }
  if (spec.kind == NoiseKind::none) {
    return ds;
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> draw(0, ds.class_count - 1);
  const auto &clean = *ds.clean_labels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bool selected = spec.kind == NoiseKind::random_all || coin(rng) < spec.rate;
    ds.labels[i] = selected ? draw(rng) : clean[i];
  }
  return ds;
}

/// Keeps only `majority_class` and `minority_class`, with every available
/// majority example and floor(majority / ratio) minority examples. Labels are
/// remapped to majority -> 0, minority -> 1.
inline Dataset make_imbalanced(const Dataset &ds, std::size_t majority_class, std::size_t minority_class,
                               double ratio, std::uint64_t seed) {
  detail::require(ratio >= 1.0, "imbalance ratio must be >= 1");
  detail::require(majority_class != minority_class, "majority and minority classes must differ");
  detail::require(majority_class < ds.class_count && minority_class < ds.class_count, "class index out of range");

  std::vector<std::size_t> majority;
  std::vector<std::size_t> minority;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == majority_class) {
      majority.push_back(i);
    } else if (ds.labels[i] == minority_class) {
      minority.push_back(i);
    }
  }
  detail::require(!majority.empty() && !minority.empty(), "both classes must be present");
  const auto wanted = static_cast<std::size_t>(std::floor(static_cast<double>(majority.size()) / ratio));
  if (wanted == 0) {
    throw std::invalid_argument("imbalance ratio leaves no minority examples");
  }
  detail::require(wanted <= minority.size(), "not enough minority examples for the requested ratio");

  std::mt19937_64 rng(seed);
  std::shuffle(minority.begin(), minority.end(), rng);
  minority.resize(wanted);

  std::vector<std::size_t> keep = majority;
  keep.insert(keep.end(), minority.begin(), minority.end());
  std::sort(keep.begin(), keep.end());

  auto remap = [&](std::size_t y) -> std::size_t { return y == majority_class ? 0 : 1; };
  Dataset out;
  out.features = Matrix(keep.size(), ds.dim());
  out.class_count = 2;
  out.split = ds.split;
  std::vector<std::size_t> clean;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const std::size_t i = keep[r];
    std::copy(ds.features.row(i).begin(), ds.features.row(i).end(), out.features.row(r).begin());
    out.labels.push_back(remap(ds.labels[i]));
    if (ds.clean_labels) {
      const std::size_t c = (*ds.clean_labels)[i];
      clean.push_back(c == majority_class ? 0 : (c == minority_class ? 1 : remap(ds.labels[i])));
    }
  }
  out.clean_labels = ds.clean_labels ? std::optional(clean) : std::optional(out.labels);
  return out;
}

/// Test copy with both classes of an imbalanced training set, balanced.
inline Dataset select_two_classes(const Dataset &ds, std::size_t majority_class, std::size_t minority_class) {
  return make_imbalanced(ds, majority_class, minority_class, 1.0, 0);
}

/// Shortest decimal that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string to_csv(const Dataset &ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) {
      out += format_double(v);
      out += ',';
    }
    out += std::to_string(ds.labels[i]);
    out += '\n';
  }
  return out;
}

/// Parses "f1,...,fd,label" rows. When class_count is zero it is inferred as
/// max label + 1; otherwise labels must be below it.
inline Dataset parse_csv(std::string_view text, std::size_t class_count = 0) {
  Dataset ds;
  std::vector<double> values;
  std::vector<double> row_values;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    if (line.empty()) {
      continue;
    }
    row_values.clear();
    std::size_t field_start = 0;
    while (true) {
      std::size_t comma = line.find(',', field_start);
      std::string_view field = line.substr(field_start, comma == std::string_view::npos ? line.npos : comma - field_start);
      while (!field.empty() && field.front() == ' ') {
        field.remove_prefix(1);
      }
      while (!field.empty() && field.back() == ' ') {
        field.remove_suffix(1);
      }
      double v = 0.0;
      auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw std::runtime_error("csv row " + std::to_string(line_no) + ": malformed field '" + std::string(field) +
                                 "'");
      }
      row_values.push_back(v);
      if (comma == std::string_view::npos) {
        break;
      }
      field_start = comma + 1;
    }
    if (row_values.size() < 2) {
      throw std::runtime_error("csv row " + std::to_string(line_no) + ": need at least one feature and a label");
    }
    if (dim == 0) {
      dim = row_values.size() - 1;
    } else if (row_values.size() - 1 != dim) {
      throw std::runtime_error("csv row " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                               " fields, got " + std::to_string(row_values.size()));
    }
    const double label = row_values.back();
    if (label < 0 || label != std::floor(label)) {
      throw std::runtime_error("csv row " + std::to_string(line_no) + ": label must be a non-negative integer");
    }
    const auto y = static_cast<std::size_t>(label);
    if (class_count != 0 && y >= class_count) {
      throw std::runtime_error("csv row " + std::to_string(line_no) + ": label " + std::to_string(y) +
                               " out of range for " + std::to_string(class_count) + " classes");
    }
    values.insert(values.end(), row_values.begin(), row_values.end() - 1);
    ds.labels.push_back(y);
  }
  if (ds.labels.empty()) {
    throw std::runtime_error("csv contains no rows");
  }
  ds.features = Matrix(ds.labels.size(), dim);
  ds.features.data() = std::move(values);
  ds.class_count = class_count != 0 ? class_count : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  if (ds.class_count < 2) {
    ds.class_count = 2;
  }
  ds.clean_labels = ds.labels;
  return ds;
}

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Dataset load_csv(const std::string &path, std::size_t class_count = 0) {
  try {
    return parse_csv(read_file(path), class_count);
  } catch (const std::runtime_error &e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

namespace detail {

inline std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const std::string &what) {
  if (offset + 4 > bytes.size()) {
    throw std::runtime_error(what + ": truncated header at byte offset " + std::to_string(offset));
  }
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + k]);
  }
  return v;
}

} // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803; // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801; // 2049

/// IDX image/label pair (MNIST layout). Pixels are scaled to [0, 1].
inline Dataset parse_idx(std::string_view images, std::string_view labels, std::size_t class_count = 10) {
  const std::uint32_t image_magic = detail::read_be32(images, 0, "idx images");
  if (image_magic != kIdxImageMagic) {
    throw std::runtime_error("idx images: bad magic at byte offset 0");
  }
  const std::uint32_t label_magic = detail::read_be32(labels, 0, "idx labels");
  if (label_magic != kIdxLabelMagic) {
    throw std::runtime_error("idx labels: bad magic at byte offset 0");
  }
  const std::size_t count = detail::read_be32(images, 4, "idx images");
  const std::size_t rows = detail::read_be32(images, 8, "idx images");
  const std::size_t cols = detail::read_be32(images, 12, "idx images");
  const std::size_t label_count = detail::read_be32(labels, 4, "idx labels");
  if (count != label_count) {
    throw std::runtime_error("idx: image count " + std::to_string(count) + " does not match label count " +
                             std::to_string(label_count) + " (byte offset 4)");
  }
  const std::size_t dim = rows * cols;
  if (count == 0 || dim == 0) {
    throw std::runtime_error("idx: empty dataset");
  }
  if (images.size() < 16 + count * dim) {
    throw std::runtime_error("idx images: truncated pixel data at byte offset " + std::to_string(images.size()));
  }
  if (labels.size() < 8 + count) {
    throw std::runtime_error("idx labels: truncated label data at byte offset " + std::to_string(labels.size()));
  }
  Dataset ds;
  ds.class_count = class_count;
  ds.features = Matrix(count, dim);
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto y = static_cast<std::size_t>(static_cast<unsigned char>(labels[8 + i]));
    if (y >= class_count) {
      throw std::runtime_error("idx labels: label " + std::to_string(y) + " out of range at byte offset " +
                               std::to_string(8 + i));
    }
    ds.labels[i] = y;
    auto row = ds.features.row(i);
    for (std::size_t d = 0; d < dim; ++d) {
      row[d] = static_cast<unsigned char>(images[16 + i * dim + d]) / 255.0;
    }
  }
  ds.clean_labels = ds.labels;
  return ds;
}

inline Dataset load_idx(const std::string &images_path, const std::string &labels_path,
                        std::size_t class_count = 10) {
  return parse_idx(read_file(images_path), read_file(labels_path), class_count);
}

} // namespace conflab
