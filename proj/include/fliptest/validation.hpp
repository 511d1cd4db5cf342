#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/QR>

#include "fliptest/core_data.hpp"
#include "fliptest/exact_transport.hpp"
#include "fliptest/flip_analysis.hpp"
#include "fliptest/neural_transport.hpp"
#include "fliptest/synth_models.hpp"

namespace fliptest {

/// Two-sample Kolmogorov-Smirnov statistic sup_t |F_a(t) - F_b(t)|.
inline double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(Errc::kEmptySample, "KS statistic needs two nonempty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  // Evaluate both ECDFs just after each distinct sample value.
  while (i < sa.size() || j < sb.size()) {
    const double v = j == sb.size() || (i < sa.size() && sa[i] <= sb[j]) ? sa[i] : sb[j];
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return best;
}

/// Least-squares fit of one column on all the others plus an intercept.
struct LinearRegression {
  std::size_t target = 0;
  std::vector<std::size_t> predictors;
  Eigen::VectorXd coefficients;  // intercept first

  double predict(std::span<const double> row) const {
    double y = coefficients(0);
    for (std::size_t k = 0; k < predictors.size(); ++k)
      y += coefficients(static_cast<Eigen::Index>(k + 1)) * row[predictors[k]];
    return y;
  }

  double mse(const FeatureMatrix& data) const {
    double total = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const double r = data(i, target) - predict(data.row(i));
      total += r * r;
    }
    return total / static_cast<double>(data.rows());
  }
};

inline LinearRegression fit_regression(const FeatureMatrix& data, std::size_t target) {
  const std::size_t d = data.cols();
  if (target >= d) throw Error(Errc::kDimensionMismatch, "target feature out of range");
  if (data.rows() < d + 1) {
    throw Error(Errc::kBadParams, "regression needs at least d + 1 = " + std::to_string(d + 1) + " rows");
  }
  LinearRegression reg;
  reg.target = target;
  for (std::size_t j = 0; j < d; ++j)
    if (j != target) reg.predictors.push_back(j);
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto p = static_cast<Eigen::Index>(reg.predictors.size() + 1);
  Eigen::MatrixXd design(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = data.row(static_cast<std::size_t>(i));
    design(i, 0) = 1.0;
    for (Eigen::Index k = 1; k < p; ++k) design(i, k) = row[reg.predictors[static_cast<std::size_t>(k - 1)]];
    y(i) = row[target];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < p) {
    std::string names;
    for (auto j : reg.predictors) names += (names.empty() ? "" : ", ") + data.feature_names()[j];
    throw Error(Errc::kSingularDesign, "predictors {" + names + "} of '" + data.feature_names()[target] +
                                           "' are collinear (with the intercept)");
  }
  reg.coefficients = qr.solve(y);
  return reg;
}

/// MSE of the regression (fit on real_target) on generated minus its MSE on
/// real_target. Positive means the generated sample fits worse.
inline double mse_diff(const FeatureMatrix& real_target, const FeatureMatrix& generated,
                       std::size_t feature_index) {
  if (real_target.feature_names() != generated.feature_names()) {
    throw Error(Errc::kSchemaMismatch, "real and generated samples have different schemas");
  }
  if (generated.empty()) throw Error(Errc::kEmptySample, "generated sample is empty");
  const LinearRegression reg = fit_regression(real_target, feature_index);
  return reg.mse(generated) - reg.mse(real_target);
}

struct DistanceComparison {
  double dist_exact = 0.0;
  double dist_gan = 0.0;
};

/// dist_exact: mean cost of the exact map between seeded size-`subset`
/// subsamples of both groups (capped at the smaller group). dist_gan: mean
/// c(x, G(x)) over all of group_a.
inline DistanceComparison distance_comparison(const GroupedDataset& data, const Generator& gen,
                                              const CostFunction& c = {}, std::size_t subset = 2000,
                                              std::uint64_t seed = 0, unsigned threads = 1) {
  const std::size_t k = std::min({subset, data.group_a.rows(), data.group_b.rows()});
  if (k == 0) throw Error(Errc::kEmptyDataset, "distance comparison on empty groups");
  const bool full = k == data.group_a.rows() && k == data.group_b.rows();
  const GroupedDataset sub = full ? data : subsample_groups(data, k, seed);
  DistanceComparison out;
  out.dist_exact = solve_exact(sub, c, threads).mean_cost;
  const FeatureMatrix moved = map_points(gen, data.group_a);
  double total = 0.0;
  for (std::size_t i = 0; i < moved.rows(); ++i) total += c(data.group_a.row(i), moved.row(i));
  out.dist_gan = total / static_cast<double>(moved.rows());
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;
};

/// Population mean and standard deviation.
inline MeanStd summarize(std::span<const double> values) {
  MeanStd s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std_dev = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

struct ValidationReport {
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> ks_stat;   // [trial][feature]
  std::vector<std::vector<double>> mse_diff;  // [trial][feature]
  std::vector<MeanStd> ks_summary;
  std::vector<MeanStd> mse_summary;
  double dist_exact = 0.0;
  double dist_gan = 0.0;
  std::size_t trials = 0;
};

/// KS and MSE-diff of target vs G(source) for each trial dataset, summarized
/// across trials, plus the distance comparison on `base`.
inline ValidationReport validate_generator(const GroupedDataset& base,
                                           const std::vector<GroupedDataset>& trial_data,
                                           const Generator& gen, const CostFunction& c = {},
                                           std::size_t subset = 2000, std::uint64_t seed = 0,
                                           unsigned threads = 1) {
  if (trial_data.empty()) throw Error(Errc::kBadConfig, "validation needs at least one trial");
  ValidationReport r;
  r.feature_names = base.group_a.feature_names();
  r.trials = trial_data.size();
  const std::size_t d = base.dims();
  for (const auto& t : trial_data) {
    const FeatureMatrix generated = map_points(gen, t.group_a);
    std::vector<double> ks(d), mse(d);
    for (std::size_t j = 0; j < d; ++j) {
      const auto real_col = t.group_b.column(j);
      const auto gen_col = generated.column(j);
      ks[j] = ks_two_sample(real_col, gen_col);
      mse[j] = mse_diff(t.group_b, generated, j);
    }
    r.ks_stat.push_back(std::move(ks));
    r.mse_diff.push_back(std::move(mse));
  }
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> ks, mse;
    for (std::size_t t = 0; t < r.trials; ++t) {
      ks.push_back(r.ks_stat[t][j]);
      mse.push_back(r.mse_diff[t][j]);
    }
    r.ks_summary.push_back(summarize(ks));
    r.mse_summary.push_back(summarize(mse));
  }
  const auto dist = distance_comparison(base, gen, c, subset, seed, threads);
  r.dist_exact = dist.dist_exact;
  r.dist_gan = dist.dist_gan;
  return r;
}

/// Bootstrap resamples (with replacement, full size) of both groups.
inline std::vector<GroupedDataset> bootstrap_trials(const GroupedDataset& data, std::size_t trials,
                                                    std::uint64_t seed) {
  std::vector<GroupedDataset> out;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, "bootstrap", t);
    auto resample = [&](const FeatureMatrix& m) {
      std::uniform_int_distribution<std::size_t> pick(0, m.rows() - 1);
      std::vector<std::size_t> idx(m.rows());
      for (auto& i : idx) i = pick(rng);
      return m.select_rows(idx);
    };
    FeatureMatrix a = resample(data.group_a);
    FeatureMatrix b = resample(data.group_b);
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

/// Runs `count` independent jobs on up to `threads` workers. Each job writes
/// only its own result slot, so output does not depend on scheduling.
template <typename Job>
void run_parallel(std::size_t count, unsigned threads, Job&& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) job(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    for (unsigned t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t k = next++; k < count; k = next++) job(k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

enum class MapMethod { kExact, kGan };

inline std::string_view method_name(MapMethod m) { return m == MapMethod::kExact ? "exact" : "gan"; }

struct StabilityConfig {
  std::size_t dims = 2;
  std::size_t n = 500;
  std::size_t draws = 100;
  std::vector<double> probe;  // defaults to the zero vector
  MapMethod method = MapMethod::kExact;
  TrainConfig train;  // used by the GAN method; its seed is replaced per draw
  CostFunction cost;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct StabilityResult {
  std::size_t dims = 0;
  std::vector<double> probe;
  std::vector<double> mean;
  std::vector<double> variance;  // population variance across draws
  std::vector<std::vector<double>> images;  // [draw][feature]
  MapMethod method = MapMethod::kExact;
};

/// Fixes a probe point, then for each draw samples n - 1 further source
/// points and n target points from the standard normal, fits a map and
/// records the probe's image. Draw k uses the same data for both methods.
inline StabilityResult stability_harness(const StabilityConfig& cfg) {
  if (cfg.dims == 0 || cfg.n < 1 || cfg.draws < 1) throw Error(Errc::kBadConfig, "stability needs dims, n, draws >= 1");
  std::vector<double> probe = cfg.probe.empty() ? std::vector<double>(cfg.dims, 0.0) : cfg.probe;
  if (probe.size() != cfg.dims) throw Error(Errc::kDimensionMismatch, "probe dimension differs from dims");

  StabilityResult r;
  r.dims = cfg.dims;
  r.probe = probe;
  r.method = cfg.method;
  r.images.assign(cfg.draws, {});
  const auto names = FeatureMatrix::default_names(cfg.dims);

  run_parallel(cfg.draws, cfg.threads, [&](std::size_t k) {
    Rng rng = make_rng(cfg.seed, "stability/draw", k);
    std::normal_distribution<double> z(0.0, 1.0);
    FeatureMatrix a(cfg.n, names), b(cfg.n, names);
    for (std::size_t j = 0; j < cfg.dims; ++j) a(0, j) = probe[j];
    for (std::size_t i = 1; i < cfg.n; ++i)
      for (std::size_t j = 0; j < cfg.dims; ++j) a(i, j) = z(rng);
    for (std::size_t i = 0; i < cfg.n; ++i)
      for (std::size_t j = 0; j < cfg.dims; ++j) b(i, j) = z(rng);
    const GroupedDataset data(std::move(a), std::move(b));
    if (cfg.method == MapMethod::kExact) {
      const ExactMap map = solve_exact(data, cfg.cost);
      const auto image = data.group_b.row(map.assignment[0]);
      r.images[k].assign(image.begin(), image.end());
    } else {
      TrainConfig tc = cfg.train;
      tc.seed = substream_seed(cfg.seed, "stability/train", k);
      const Generator gen = train(data, tc, cfg.cost);
      r.images[k] = map_point(gen, probe);
    }
  });

  r.mean.assign(cfg.dims, 0.0);
  r.variance.assign(cfg.dims, 0.0);
  for (std::size_t j = 0; j < cfg.dims; ++j) {
    std::vector<double> col;
    for (const auto& img : r.images) col.push_back(img[j]);
    const MeanStd s = summarize(col);
    r.mean[j] = s.mean;
    r.variance[j] = s.std_dev * s.std_dev;
  }
  return r;
}

struct ControlConfig {
  std::size_t n = 10000;
  std::size_t anchors = 2000;
  TrainConfig train;  // lambda defaults to 1e-4
  CostFunction cost;
  std::uint64_t seed = 0;
};

struct ControlResult {
  std::size_t flip_pos = 0;
  std::size_t flip_neg = 0;
  std::size_t classified_positive = 0;  // in the source test sample
  std::size_t classified_negative = 0;
  std::vector<double> mean_abs_displacement;  // per feature, |x - G(x)|
  Generator generator;
};

/// Two groups that differ only in features 3..5, a random-label
/// nearest-neighbour classifier restricted to features 0..2 (trained on a
/// separate draw), and a generator trained on the test draw. Small flipsets
/// mean the map leaves the features the classifier sees alone.
inline ControlResult control_experiment(const ControlConfig& cfg) {
  const GroupedDataset train_set = gen_control_normal(cfg.n, substream_seed(cfg.seed, "control/train"));
  const GroupedDataset test_set = gen_control_normal(cfg.n, substream_seed(cfg.seed, "control/test"));

  // Anchors are drawn from the pooled training set.
  FeatureMatrix pooled(2 * cfg.n, train_set.group_a.feature_names());
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      pooled(i, j) = train_set.group_a(i, j);
      pooled(cfg.n + i, j) = train_set.group_b(i, j);
    }
  }
  const FeatureMatrix anchor_pool =
      subsample(pooled, std::min(cfg.anchors, pooled.rows()), substream_seed(cfg.seed, "control/anchors"));
  const auto model = NearestNeighborModel::random_labels(anchor_pool, anchor_pool.rows(), {0, 1, 2},
                                                         substream_seed(cfg.seed, "classifier"));

  TrainConfig tc = cfg.train;
  ControlResult r;
  r.generator = train(test_set, tc, cfg.cost);
  const FeatureMatrix moved = map_points(r.generator, test_set.group_a);
  const Flipset f = compute_flipset(model, test_set.group_a, moved);
  r.flip_pos = f.positive.size();
  r.flip_neg = f.negative.size();
  r.classified_positive =
      static_cast<std::size_t>(std::count(f.source_predictions.begin(), f.source_predictions.end(), 1));
  r.classified_negative = f.n_source - r.classified_positive;
  r.mean_abs_displacement.assign(6, 0.0);
  for (std::size_t i = 0; i < moved.rows(); ++i)
    for (std::size_t j = 0; j < 6; ++j) r.mean_abs_displacement[j] += std::abs(test_set.group_a(i, j) - moved(i, j));
  for (auto& v : r.mean_abs_displacement) v /= static_cast<double>(moved.rows());
  return r;
}

}  // namespace fliptest
