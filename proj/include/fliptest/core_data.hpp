#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fliptest/errors.hpp"

namespace fliptest {

/// Dense row-major n x d sample with named columns.
///
/// Each row also carries a row id: the index of the row in the file it was
/// read from, or -1 for synthetic points (e.g. generator outputs). Black-box
/// classifiers backed by a predictions file use it to look rows up.
class FeatureMatrix {
 public:
  static constexpr std::int64_t kSyntheticRow = -1;

  FeatureMatrix() = default;

  FeatureMatrix(std::size_t rows, std::vector<std::string> feature_names)
      : rows_(rows),
        names_(std::move(feature_names)),
        values_(rows_ * names_.size(), 0.0),
        row_ids_(rows_) {
    check_names();
    std::iota(row_ids_.begin(), row_ids_.end(), std::int64_t{0});
  }

  FeatureMatrix(std::size_t rows, std::vector<std::string> feature_names,
                std::vector<double> values)
      : rows_(rows), names_(std::move(feature_names)), values_(std::move(values)),
        row_ids_(rows_) {
    check_names();
    if (values_.size() != rows_ * names_.size()) {
      throw Error(Errc::kShapeMismatch, "value count " + std::to_string(values_.size()) +
                                            " does not match " + std::to_string(rows_) +
                                            " x " + std::to_string(names_.size()));
    }
    check_finite();
    std::iota(row_ids_.begin(), row_ids_.end(), std::int64_t{0});
  }

  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows,
                                 std::vector<std::string> feature_names) {
    const std::size_t d = feature_names.size();
    std::vector<double> values;
    values.reserve(rows.size() * d);
    for (const auto& r : rows) {
      if (r.size() != d) {
        throw Error(Errc::kDimensionMismatch,
                    "row has " + std::to_string(r.size()) + " values, expected " +
                        std::to_string(d));
      }
      values.insert(values.end(), r.begin(), r.end());
    }
    return FeatureMatrix(rows.size(), std::move(feature_names), std::move(values));
  }

  /// Column names x0, x1, ... for programmatic data.
  static std::vector<std::string> default_names(std::size_t d) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
    return names;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return names_.size(); }
  bool empty() const noexcept { return rows_ == 0; }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * cols(), cols()};
  }
  std::span<double> row(std::size_t i) { return {values_.data() + i * cols(), cols()}; }

  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols() + j]; }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  std::int64_t row_id(std::size_t i) const { return row_ids_[i]; }
  const std::vector<std::int64_t>& row_ids() const noexcept { return row_ids_; }
  void set_row_ids(std::vector<std::int64_t> ids) {
    if (ids.size() != rows_) throw Error(Errc::kShapeMismatch, "row id count mismatch");
    row_ids_ = std::move(ids);
  }
  void mark_synthetic() { std::fill(row_ids_.begin(), row_ids_.end(), kSyntheticRow); }

  std::optional<std::size_t> feature_index(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  /// Rows in the given order; row ids travel with the rows.
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const {
    FeatureMatrix out(indices.size(), names_);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const std::size_t i = indices[k];
      if (i >= rows_) throw Error(Errc::kShapeMismatch, "row index out of range");
      std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(i * cols()), cols(),
                  out.values_.begin() + static_cast<std::ptrdiff_t>(k * cols()));
      out.row_ids_[k] = row_ids_[i];
    }
    return out;
  }

  /// Throws NonFinite if any value is NaN or infinite.
  void check_finite() const {
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (!std::isfinite(values_[k])) {
        throw Error(Errc::kNonFinite, "non-finite value at row " + std::to_string(k / cols()) +
                                          ", feature '" + names_[k % cols()] + "'");
      }
    }
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  void check_names() const {
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw Error(Errc::kSchemaMismatch, "empty feature name");
      if (!seen.insert(n).second) {
        throw Error(Errc::kSchemaMismatch, "duplicate feature name '" + n + "'");
      }
    }
  }

  std::size_t rows_ = 0;
  std::vector<std::string> names_;
  std::vector<double> values_;
  std::vector<std::int64_t> row_ids_;
};

/// Source sample S (group_a) and target sample S' (group_b) over one schema.
struct GroupedDataset {
  FeatureMatrix group_a;
  FeatureMatrix group_b;
  std::optional<std::vector<int>> labels_a;
  std::optional<std::vector<int>> labels_b;

  GroupedDataset() = default;
  GroupedDataset(FeatureMatrix a, FeatureMatrix b,
                 std::optional<std::vector<int>> la = std::nullopt,
                 std::optional<std::vector<int>> lb = std::nullopt)
      : group_a(std::move(a)), group_b(std::move(b)), labels_a(std::move(la)),
        labels_b(std::move(lb)) {
    validate();
  }

  std::size_t dims() const { return group_a.cols(); }
  bool has_labels() const { return labels_a.has_value() && labels_b.has_value(); }

  /// The same data with the roles of the two groups exchanged.
  GroupedDataset swapped() const { return GroupedDataset(group_b, group_a, labels_b, labels_a); }

  void validate() const {
    if (group_a.feature_names() != group_b.feature_names()) {
      throw Error(Errc::kSchemaMismatch, "groups have different feature schemas");
    }
    auto check_labels = [](const std::optional<std::vector<int>>& labels,
                           const FeatureMatrix& m, const char* which) {
      if (!labels) return;
      if (labels->size() != m.rows()) {
        throw Error(Errc::kShapeMismatch, std::string("label count of ") + which +
                                              " does not match its row count");
      }
      for (int y : *labels) {
        if (y != 0 && y != 1) {
          throw Error(Errc::kBadParams, std::string("labels of ") + which + " must be 0/1");
        }
      }
    };
    check_labels(labels_a, group_a, "group_a");
    check_labels(labels_b, group_b, "group_b");
  }
};

/// Per-feature affine standardization with population statistics.
struct Normalizer {
  std::vector<double> means;
  std::vector<double> std_devs;

  std::size_t dims() const { return means.size(); }

  FeatureMatrix transform(const FeatureMatrix& data) const {
    check_dims(data);
    FeatureMatrix out = data;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) {
        out(i, j) = (data(i, j) - means[j]) / std_devs[j];
      }
    }
    return out;
  }

  FeatureMatrix inverse_transform(const FeatureMatrix& data) const {
    check_dims(data);
    FeatureMatrix out = data;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) {
        out(i, j) = data(i, j) * std_devs[j] + means[j];
      }
    }
    return out;
  }

  std::vector<double> transform_point(std::span<const double> x) const {
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - means[j]) / std_devs[j];
    return out;
  }

  GroupedDataset transform(const GroupedDataset& data) const {
    return GroupedDataset(transform(data.group_a), transform(data.group_b), data.labels_a,
                          data.labels_b);
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;

 private:
  void check_dims(const FeatureMatrix& data) const {
    if (data.cols() != dims()) {
      throw Error(Errc::kDimensionMismatch, "normalizer has " + std::to_string(dims()) +
                                                " features, data has " +
                                                std::to_string(data.cols()));
    }
  }
};

namespace detail {

inline Normalizer fit_columns(const std::vector<const FeatureMatrix*>& parts) {
  const std::size_t d = parts.front()->cols();
  const auto& names = parts.front()->feature_names();
  std::size_t n = 0;
  for (const auto* p : parts) {
    p->check_finite();
    n += p->rows();
  }
  if (n < 2) throw Error(Errc::kEmptyDataset, "need at least 2 rows to fit a normalizer");

  Normalizer norm{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (const auto* p : parts)
      for (std::size_t i = 0; i < p->rows(); ++i) sum += (*p)(i, j);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto* p : parts) {
      for (std::size_t i = 0; i < p->rows(); ++i) {
        const double dev = (*p)(i, j) - mean;
        ss += dev * dev;
      }
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 0.0)) throw Error(Errc::kConstantFeature, "feature '" + names[j] + "' is constant");
    norm.means[j] = mean;
    norm.std_devs[j] = sd;
  }
  return norm;
}

}  // namespace detail

inline Normalizer fit_normalizer(const FeatureMatrix& data) {
  return detail::fit_columns({&data});
}

/// Fits on the union of both groups so the shift between them survives.
inline Normalizer fit_normalizer(const GroupedDataset& data) {
  return detail::fit_columns({&data.group_a, &data.group_b});
}

enum class CostKind { kSquaredL1, kL1, kSquaredL2 };

struct CostFunction {
  CostKind kind = CostKind::kSquaredL1;

  double operator()(std::span<const double> x, std::span<const double> y) const {
    if (x.size() != y.size()) {
      throw Error(Errc::kDimensionMismatch, "cost between points of dimension " +
                                                std::to_string(x.size()) + " and " +
                                                std::to_string(y.size()));
    }
    return evaluate(x, y);
  }

  /// Unchecked evaluation for inner loops.
  double evaluate(std::span<const double> x, std::span<const double> y) const {
    double acc = 0.0;
    switch (kind) {
      case CostKind::kSquaredL1:
        for (std::size_t j = 0; j < x.size(); ++j) acc += std::abs(x[j] - y[j]);
        return acc * acc;
      case CostKind::kL1:
        for (std::size_t j = 0; j < x.size(); ++j) acc += std::abs(x[j] - y[j]);
        return acc;
      case CostKind::kSquaredL2:
        for (std::size_t j = 0; j < x.size(); ++j) {
          const double t = x[j] - y[j];
          acc += t * t;
        }
        return acc;
    }
    return acc;
  }

  /// Subgradient of c(x, y) with respect to y, written into `out`.
  /// Uses sign(0) = 0 at the kinks of the L1 variants.
  void gradient_wrt_second(std::span<const double> x, std::span<const double> y,
                           std::span<double> out) const {
    auto sgn = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };
    switch (kind) {
      case CostKind::kSquaredL1: {
        double l1 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) l1 += std::abs(x[j] - y[j]);
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = 2.0 * l1 * sgn(y[j] - x[j]);
        return;
      }
      case CostKind::kL1:
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = sgn(y[j] - x[j]);
        return;
      case CostKind::kSquaredL2:
        for (std::size_t j = 0; j < x.size(); ++j) out[j] = 2.0 * (y[j] - x[j]);
        return;
    }
  }
};

inline std::string_view cost_name(CostKind kind) {
  switch (kind) {
    case CostKind::kSquaredL1: return "sql1";
    case CostKind::kL1: return "l1";
    case CostKind::kSquaredL2: return "sql2";
  }
  return "sql1";
}

inline std::optional<CostKind> parse_cost_kind(std::string_view name) {
  if (name == "sql1" || name == "squared_l1") return CostKind::kSquaredL1;
  if (name == "l1") return CostKind::kL1;
  if (name == "sql2" || name == "squared_l2") return CostKind::kSquaredL2;
  return std::nullopt;
}

using CostMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Entry (i, j) = c(a_i, b_j). Rows may be split across `threads` workers;
/// each entry is computed independently so the result does not depend on it.
inline CostMatrix cost_matrix(const CostFunction& c, const FeatureMatrix& a,
                              const FeatureMatrix& b, unsigned threads = 1) {
  if (a.cols() != b.cols()) {
    throw Error(Errc::kDimensionMismatch, "cost matrix between " + std::to_string(a.cols()) +
                                              "-d and " + std::to_string(b.cols()) +
                                              "-d samples");
  }
  CostMatrix out(static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(b.rows()));
  auto fill = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < b.rows(); ++j)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            c.evaluate(a.row(i), b.row(j));
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(a.rows())));
  if (threads == 1) {
    fill(0, a.rows());
    return out;
  }
  {
    std::vector<std::jthread> workers;
    const std::size_t chunk = (a.rows() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(a.rows(), begin + chunk);
      if (begin < end) workers.emplace_back(fill, begin, end);
    }
  }
  return out;
}

}  // namespace fliptest
