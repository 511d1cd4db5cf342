#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fliptest/core_data.hpp"
#include "fliptest/exact_transport.hpp"
#include "fliptest/neural_transport.hpp"

namespace fliptest {

/// Black-box binary classifier h: X -> {0, 1}.
///
/// `row_id` is the file row the point came from, or FeatureMatrix::kSyntheticRow
/// for generated points. Most models ignore it.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int predict(std::span<const double> x, std::int64_t row_id) const = 0;

  std::vector<int> predict_all(const FeatureMatrix& points) const {
    std::vector<int> out(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) out[i] = predict(points.row(i), points.row_id(i));
    return out;
  }
};

/// The map x -> x. Useful as a baseline: every flipset is empty.
struct IdentityMap {};

using TransportMap = std::variant<IdentityMap, ExactMap, Generator>;

/// Counterparts G(x) of every row of group_a, in group_a order.
inline FeatureMatrix counterparts(const TransportMap& map, const GroupedDataset& data) {
  return std::visit(
      [&](const auto& m) -> FeatureMatrix {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IdentityMap>) {
          return data.group_a;
        } else if constexpr (std::is_same_v<T, ExactMap>) {
          if (m.size() != data.group_a.rows()) {
            throw Error(Errc::kShapeMismatch, "exact map covers " + std::to_string(m.size()) +
                                                  " source rows, data has " +
                                                  std::to_string(data.group_a.rows()));
          }
          return m.apply(data.group_b);
        } else {
          return map_points(m, data.group_a);
        }
      },
      map);
}

struct Flipset {
  std::vector<std::size_t> positive;  // h(x) = 1, h(G(x)) = 0
  std::vector<std::size_t> negative;  // h(x) = 0, h(G(x)) = 1
  std::size_t n_source = 0;
  FeatureMatrix counterpart_rows;
  std::vector<int> source_predictions;
  std::vector<int> counterpart_predictions;

  std::size_t agreements() const { return n_source - positive.size() - negative.size(); }
};

inline Flipset compute_flipset(const Classifier& h, const FeatureMatrix& source,
                               const FeatureMatrix& mapped) {
  if (source.rows() != mapped.rows() || source.cols() != mapped.cols()) {
    throw Error(Errc::kShapeMismatch, "source is " + std::to_string(source.rows()) + "x" +
                                          std::to_string(source.cols()) + ", mapped is " +
                                          std::to_string(mapped.rows()) + "x" +
                                          std::to_string(mapped.cols()));
  }
  Flipset f;
  f.n_source = source.rows();
  f.counterpart_rows = mapped;
  f.source_predictions = h.predict_all(source);
  f.counterpart_predictions = h.predict_all(mapped);
  for (std::size_t i = 0; i < f.n_source; ++i) {
    if (f.source_predictions[i] > f.counterpart_predictions[i]) f.positive.push_back(i);
    if (f.source_predictions[i] < f.counterpart_predictions[i]) f.negative.push_back(i);
  }
  return f;
}

/// Mean of x - G(x) and of sign(x - G(x)) over one side of a flipset, with
/// both vectors ranked by absolute value (ties keep feature order).
struct TransparencyReport {
  std::vector<std::string> feature_names;
  std::vector<double> mean_diff;
  std::vector<double> mean_sign;
  std::vector<std::string> ranking_by_diff;
  std::vector<std::string> ranking_by_sign;
  std::size_t size = 0;
};

namespace detail {

inline std::vector<std::string> rank_by_magnitude(const std::vector<std::string>& names,
                                                  const std::vector<double>& values) {
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(values[a]) > std::abs(values[b]);
  });
  std::vector<std::string> out;
  out.reserve(order.size());
  for (auto k : order) out.push_back(names[k]);
  return out;
}

}  // namespace detail

/// Features named in `exclude` (e.g. the protected attribute) are left out of
/// the report entirely.
inline TransparencyReport transparency_report(std::span<const std::size_t> flipset_side,
                                              const FeatureMatrix& source,
                                              const FeatureMatrix& mapped,
                                              const std::vector<std::string>& exclude = {}) {
  if (flipset_side.empty()) throw Error(Errc::kEmptyFlipset, "transparency report of an empty flipset");
  if (source.rows() != mapped.rows() || source.cols() != mapped.cols()) {
    throw Error(Errc::kShapeMismatch, "source and mapped shapes differ");
  }
  std::vector<std::size_t> kept;
  TransparencyReport r;
  for (std::size_t j = 0; j < source.cols(); ++j) {
    const auto& name = source.feature_names()[j];
    if (std::find(exclude.begin(), exclude.end(), name) != exclude.end()) continue;
    kept.push_back(j);
    r.feature_names.push_back(name);
  }
  r.size = flipset_side.size();
  r.mean_diff.assign(kept.size(), 0.0);
  r.mean_sign.assign(kept.size(), 0.0);
  for (std::size_t i : flipset_side) {
    if (i >= source.rows()) throw Error(Errc::kShapeMismatch, "flipset index out of range");
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const double diff = source(i, kept[k]) - mapped(i, kept[k]);
      r.mean_diff[k] += diff;
      r.mean_sign[k] += static_cast<double>((diff > 0.0) - (diff < 0.0));
    }
  }
  const double inv = 1.0 / static_cast<double>(r.size);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    r.mean_diff[k] *= inv;
    r.mean_sign[k] *= inv;
  }
  r.ranking_by_diff = detail::rank_by_magnitude(r.feature_names, r.mean_diff);
  r.ranking_by_sign = detail::rank_by_magnitude(r.feature_names, r.mean_sign);
  return r;
}

struct ParityCheck {
  std::size_t positives_a = 0;
  std::size_t positives_b = 0;
  std::size_t flip_pos = 0;
  std::size_t flip_neg = 0;

  long long net() const {
    return static_cast<long long>(flip_pos) - static_cast<long long>(flip_neg);
  }
};

struct AuditResult {
  ParityCheck parity;
  Flipset flipset;
  std::optional<TransparencyReport> positive_report;  // nullopt: side is empty
  std::optional<TransparencyReport> negative_report;
};

/// Audit with precomputed counterparts: `mapped` row i is the image of
/// group_a row i.
inline AuditResult demographic_parity_audit(const GroupedDataset& data, const Classifier& h,
                                            const FeatureMatrix& mapped,
                                            const std::vector<std::string>& exclude = {}) {
  AuditResult out;
  out.flipset = compute_flipset(h, data.group_a, mapped);
  const auto& src = out.flipset.source_predictions;
  out.parity.positives_a = static_cast<std::size_t>(std::count(src.begin(), src.end(), 1));
  const auto tgt = h.predict_all(data.group_b);
  out.parity.positives_b = static_cast<std::size_t>(std::count(tgt.begin(), tgt.end(), 1));
  out.parity.flip_pos = out.flipset.positive.size();
  out.parity.flip_neg = out.flipset.negative.size();
  if (!out.flipset.positive.empty()) {
    out.positive_report = transparency_report(out.flipset.positive, data.group_a, mapped, exclude);
  }
  if (!out.flipset.negative.empty()) {
    out.negative_report = transparency_report(out.flipset.negative, data.group_a, mapped, exclude);
  }
  return out;
}

inline AuditResult demographic_parity_audit(const GroupedDataset& data, const Classifier& h,
                                            const TransportMap& map,
                                            const std::vector<std::string>& exclude = {}) {
  return demographic_parity_audit(data, h, counterparts(map, data), exclude);
}

/// Rows of both groups whose true label equals `label`.
inline GroupedDataset label_stratum(const GroupedDataset& data, int label) {
  if (!data.has_labels()) throw Error(Errc::kMissingLabels, "equalized odds needs labels on both groups");
  auto pick = [label](const std::vector<int>& labels) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) idx.push_back(i);
    return idx;
  };
  const auto ia = pick(*data.labels_a);
  const auto ib = pick(*data.labels_b);
  if (ia.empty()) {
    throw Error(Errc::kEmptyStratum, "group_a has no rows with label " + std::to_string(label));
  }
  if (ib.empty()) {
    throw Error(Errc::kEmptyStratum, "group_b has no rows with label " + std::to_string(label));
  }
  return GroupedDataset(data.group_a.select_rows(ia), data.group_b.select_rows(ib),
                        std::vector<int>(ia.size(), label), std::vector<int>(ib.size(), label));
}

struct EqualizedOddsResult {
  AuditResult positive_stratum;  // true label 1
  AuditResult negative_stratum;  // true label 0
};

/// `map_pos` must be built on the label-1 strata, `map_neg` on the label-0 strata.
inline EqualizedOddsResult equalized_odds_audit(const GroupedDataset& data, const Classifier& h,
                                                const TransportMap& map_pos,
                                                const TransportMap& map_neg,
                                                const std::vector<std::string>& exclude = {}) {
  const GroupedDataset pos = label_stratum(data, 1);
  const GroupedDataset neg = label_stratum(data, 0);
  return {demographic_parity_audit(pos, h, map_pos, exclude),
          demographic_parity_audit(neg, h, map_neg, exclude)};
}

struct ReverseConsistency {
  std::size_t fwd_pos = 0;
  std::size_t fwd_neg = 0;
  std::size_t rev_pos = 0;
  std::size_t rev_neg = 0;
};

/// Flipset sizes of a forward map (group_a -> group_b) and a reverse map
/// (group_b -> group_a). Good approximations give fwd_pos ~ rev_neg and
/// fwd_neg ~ rev_pos.
inline ReverseConsistency reverse_consistency(const GroupedDataset& data, const Classifier& h,
                                              const TransportMap& map_fwd,
                                              const TransportMap& map_rev) {
  const Flipset fwd = compute_flipset(h, data.group_a, counterparts(map_fwd, data));
  const GroupedDataset rev_data = data.swapped();
  const Flipset rev = compute_flipset(h, rev_data.group_a, counterparts(map_rev, rev_data));
  return {fwd.positive.size(), fwd.negative.size(), rev.positive.size(), rev.negative.size()};
}

struct HistogramBin {
  std::string feature;
  double bin_left = 0.0;
  double bin_right = 0.0;
  std::size_t count_population = 0;
  std::size_t count_flipset = 0;
};

/// Per-feature marginal counts of the whole population and of the flipset
/// rows over `bins` equal-width bins spanning the pooled range. The last bin
/// is closed on the right.
inline std::vector<HistogramBin> marginal_histograms(const FeatureMatrix& population,
                                                     std::span<const std::size_t> flip_rows,
                                                     std::size_t bins = 20) {
  if (bins == 0) throw Error(Errc::kBadConfig, "histogram needs at least one bin");
  std::vector<HistogramBin> out;
  if (population.empty()) return out;
  for (std::size_t j = 0; j < population.cols(); ++j) {
    double lo = population(0, j), hi = population(0, j);
    for (std::size_t i = 0; i < population.rows(); ++i) {
      lo = std::min(lo, population(i, j));
      hi = std::max(hi, population(i, j));
    }
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    auto bin_of = [&](double v) {
      auto k = static_cast<std::size_t>(std::floor((v - lo) / width));
      return std::min(k, bins - 1);
    };
    std::vector<std::size_t> pop(bins, 0), flip(bins, 0);
    for (std::size_t i = 0; i < population.rows(); ++i) ++pop[bin_of(population(i, j))];
    for (std::size_t i : flip_rows) ++flip[bin_of(population(i, j))];
    for (std::size_t k = 0; k < bins; ++k) {
      out.push_back({population.feature_names()[j], lo + width * static_cast<double>(k),
                     k + 1 == bins ? hi : lo + width * static_cast<double>(k + 1), pop[k], flip[k]});
    }
  }
  return out;
}

}  // namespace fliptest
