#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>

#include "fliptest/core_data.hpp"
#include "fliptest/csv.hpp"
#include "fliptest/flip_analysis.hpp"
#include "fliptest/random.hpp"

namespace fliptest {

// ---------------------------------------------------------------------------
// Synthetic data

/// Two-feature hiring data: work experience and hair length per gender.
///
/// work_exp = Poisson(rate) - Normal(offset, offset_sd), hair_length =
/// hair_scale * Beta(alpha, beta). The defaults give women longer hair and
/// less work experience than men. Labels are drawn as
/// Bernoulli(sigmoid(label_slope * (work_exp - label_center))).
struct HiringParams {
  double work_rate_women = 25.0;
  double work_rate_men = 31.0;
  double work_offset = 20.0;
  double work_offset_sd = 0.2;
  double hair_scale = 35.0;
  double hair_alpha_women = 2.0;
  double hair_beta_women = 2.0;
  double hair_alpha_men = 2.0;
  double hair_beta_men = 7.0;
  double label_center = 8.0;
  double label_slope = 0.5;

  void validate() const {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(work_rate_women) || !positive(work_rate_men) || !(work_offset_sd >= 0.0) ||
        !positive(hair_scale) || !positive(hair_alpha_women) || !positive(hair_beta_women) ||
        !positive(hair_alpha_men) || !positive(hair_beta_men) || !std::isfinite(work_offset) ||
        !std::isfinite(label_center) || !std::isfinite(label_slope)) {
      throw Error(Errc::kBadParams, "hiring generator parameters out of range");
    }
  }
};

inline const std::vector<std::string>& hiring_feature_names() {
  static const std::vector<std::string> names{"work_exp", "hair_length"};
  return names;
}

namespace detail {

inline double draw_beta(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

inline void check_n(std::size_t n) {
  if (n < 1) throw Error(Errc::kBadParams, "n_per_group must be >= 1");
}

}  // namespace detail

/// group_a = women, group_b = men.
inline GroupedDataset gen_two_feature_hiring(std::size_t n, std::uint64_t seed,
                                             const HiringParams& p = {}) {
  detail::check_n(n);
  p.validate();
  auto draw = [&](std::string_view stream, double rate, double alpha, double beta) {
    Rng rng = make_rng(seed, stream);
    std::poisson_distribution<int> work(rate);
    std::normal_distribution<double> offset(p.work_offset, p.work_offset_sd);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FeatureMatrix m(n, hiring_feature_names());
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      m(i, 0) = static_cast<double>(work(rng)) - offset(rng);
      m(i, 1) = p.hair_scale * detail::draw_beta(rng, alpha, beta);
      const double prob = 1.0 / (1.0 + std::exp(-p.label_slope * (m(i, 0) - p.label_center)));
      labels[i] = u(rng) < prob ? 1 : 0;
    }
    return std::pair{std::move(m), std::move(labels)};
  };
  auto [women, lw] = draw("hiring/women", p.work_rate_women, p.hair_alpha_women, p.hair_beta_women);
  auto [men, lm] = draw("hiring/men", p.work_rate_men, p.hair_alpha_men, p.hair_beta_men);
  return GroupedDataset(std::move(women), std::move(men), std::move(lw), std::move(lm));
}

/// One feature `arrests`: Geometric(1/4) - 1 in group_a, Geometric(1/2) - 1 in
/// group_b (number of failures before the first success).
inline GroupedDataset gen_geometric_arrests(std::size_t n, std::uint64_t seed, double p_a = 0.25,
                                            double p_b = 0.5) {
  detail::check_n(n);
  if (!(p_a > 0.0 && p_a <= 1.0 && p_b > 0.0 && p_b <= 1.0)) {
    throw Error(Errc::kBadParams, "geometric success probabilities must lie in (0, 1]");
  }
  auto draw = [&](std::string_view stream, double p) {
    Rng rng = make_rng(seed, stream);
    std::geometric_distribution<int> g(p);
    FeatureMatrix m(n, {"arrests"});
    for (std::size_t i = 0; i < n; ++i) m(i, 0) = static_cast<double>(g(rng));
    return m;
  };
  return GroupedDataset(draw("geometric/a", p_a), draw("geometric/b", p_b));
}

/// Multivariate normals N(mean_a, cov) and N(mean_b, cov).
inline GroupedDataset gen_gaussian(std::size_t n, std::uint64_t seed, const std::vector<double>& mean_a,
                                   const std::vector<double>& mean_b,
                                   const std::optional<Eigen::MatrixXd>& cov = std::nullopt,
                                   std::vector<std::string> names = {}) {
  detail::check_n(n);
  const std::size_t d = mean_a.size();
  if (d == 0 || mean_b.size() != d) throw Error(Errc::kBadParams, "means must be nonempty and of equal length");
  if (names.empty()) names = FeatureMatrix::default_names(d);
  if (names.size() != d) throw Error(Errc::kBadParams, "feature name count differs from dimension");
  Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  if (cov) {
    if (cov->rows() != static_cast<Eigen::Index>(d) || cov->cols() != static_cast<Eigen::Index>(d)) {
      throw Error(Errc::kBadParams, "covariance must be d x d");
    }
    if (!cov->isApprox(cov->transpose())) throw Error(Errc::kBadParams, "covariance must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(*cov);
    if (llt.info() != Eigen::Success) throw Error(Errc::kBadParams, "covariance is not positive definite");
    chol = llt.matrixL();
  }
  auto draw = [&](std::string_view stream, const std::vector<double>& mean) {
    Rng rng = make_rng(seed, stream);
    std::normal_distribution<double> z(0.0, 1.0);
    FeatureMatrix m(n, names);
    Eigen::VectorXd e(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) e(static_cast<Eigen::Index>(j)) = z(rng);
      const Eigen::VectorXd x = chol * e;
      for (std::size_t j = 0; j < d; ++j) m(i, j) = mean[j] + x(static_cast<Eigen::Index>(j));
    }
    return m;
  };
  return GroupedDataset(draw("gaussian/a", mean_a), draw("gaussian/b", mean_b));
}

/// Six identity-covariance normal features; the first three share a
/// distribution across groups, the last three have means +1 (group_a) and
/// -1 (group_b).
inline GroupedDataset gen_control_normal(std::size_t n, std::uint64_t seed) {
  return gen_gaussian(n, seed, {0, 0, 0, 1, 1, 1}, {0, 0, 0, -1, -1, -1}, std::nullopt,
                      {"x0", "x1", "x2", "x3", "x4", "x5"});
}

enum class SynthKind { kHiring, kGeometric, kControl, kGaussian };

struct GeneratorSpec {
  SynthKind kind = SynthKind::kHiring;
  std::size_t n_per_group = 1000;
  std::uint64_t seed = 0;
  HiringParams hiring;
  std::vector<double> mean_a{0.0};
  std::vector<double> mean_b{1.0};
  std::optional<Eigen::MatrixXd> covariance;
};

/// Group names written to CSV; the source group sorts first.
inline std::pair<std::string, std::string> synth_group_names(SynthKind kind) {
  if (kind == SynthKind::kHiring) return {"female", "male"};
  return {"source", "target"};
}

inline GroupedDataset generate(const GeneratorSpec& spec) {
  switch (spec.kind) {
    case SynthKind::kHiring: return gen_two_feature_hiring(spec.n_per_group, spec.seed, spec.hiring);
    case SynthKind::kGeometric: return gen_geometric_arrests(spec.n_per_group, spec.seed);
    case SynthKind::kControl: return gen_control_normal(spec.n_per_group, spec.seed);
    case SynthKind::kGaussian:
      return gen_gaussian(spec.n_per_group, spec.seed, spec.mean_a, spec.mean_b, spec.covariance);
  }
  throw Error(Errc::kBadParams, "unknown generator kind");
}

// ---------------------------------------------------------------------------
// Classifiers

/// predict = 1 iff w . x > t; ties classify as 0.
class LinearThresholdModel : public Classifier {
 public:
  LinearThresholdModel() = default;
  LinearThresholdModel(std::vector<double> weights, double threshold)
      : weights_(std::move(weights)), threshold_(threshold) {}

  double score(std::span<const double> x) const {
    if (x.size() != weights_.size()) {
      throw Error(Errc::kDimensionMismatch, "linear model has " + std::to_string(weights_.size()) +
                                                " weights, point has " + std::to_string(x.size()));
    }
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += weights_[j] * x[j];
    return s;
  }

  int predict(std::span<const double> x, std::int64_t) const override {
    return score(x) > threshold_ ? 1 : 0;
  }

  const std::vector<double>& weights() const noexcept { return weights_; }
  double threshold() const noexcept { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }

 private:
  std::vector<double> weights_;
  double threshold_ = 0.0;
};

/// Applies a normalizer before delegating; lets models defined on
/// standardized features run on raw data.
class NormalizedInputModel : public Classifier {
 public:
  NormalizedInputModel(std::shared_ptr<const Classifier> inner, Normalizer norm)
      : inner_(std::move(inner)), norm_(std::move(norm)) {}

  int predict(std::span<const double> x, std::int64_t row_id) const override {
    return inner_->predict(norm_.transform_point(x), row_id);
  }

 private:
  std::shared_ptr<const Classifier> inner_;
  Normalizer norm_;
};

/// 0 for zero arrests, 1 for two or more, and a seeded fair coin for exactly
/// one. The coin is a function of (seed, row id) for file rows and of
/// (seed, value bits) for synthetic points, so repeated queries agree.
/// Non-integer inputs are rounded to the nearest count.
class ArrestsModel : public Classifier {
 public:
  explicit ArrestsModel(std::uint64_t seed = 0, std::size_t feature = 0)
      : seed_(seed), feature_(feature) {}

  int predict(std::span<const double> x, std::int64_t row_id) const override {
    if (feature_ >= x.size()) throw Error(Errc::kDimensionMismatch, "arrests feature out of range");
    const double arrests = std::round(x[feature_]);
    if (arrests <= 0.0) return 0;
    if (arrests >= 2.0) return 1;
    const std::uint64_t key = row_id >= 0
                                  ? static_cast<std::uint64_t>(row_id)
                                  : std::bit_cast<std::uint64_t>(x[feature_]) ^ 0x5bd1e995ULL;
    return static_cast<int>(substream_seed(seed_, "arrests/coin", key) & 1ULL);
  }

 private:
  std::uint64_t seed_;
  std::size_t feature_;
};

/// Fixed predictions keyed by file row id.
class PredictionsFileModel : public Classifier {
 public:
  explicit PredictionsFileModel(std::unordered_map<std::int64_t, int> table)
      : table_(std::move(table)) {}

  int predict(std::span<const double>, std::int64_t row_id) const override {
    auto it = table_.find(row_id);
    if (it == table_.end()) {
      throw Error(Errc::kShapeMismatch,
                  row_id < 0 ? "predictions file cannot classify generated points; use an exact map"
                             : "predictions file has no entry for row " + std::to_string(row_id));
    }
    return it->second;
  }

  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::int64_t, int> table_;
};

/// Reads `prediction` (one per data row, in file order) or `row,prediction`.
inline PredictionsFileModel load_predictions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::kParse, "empty predictions file");
  const auto header = csv_detail::split_line(line);
  std::optional<std::size_t> row_col, pred_col;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == "row") row_col = k;
    if (header[k] == "prediction") pred_col = k;
  }
  if (!pred_col) throw Error(Errc::kSchemaMismatch, "predictions file needs a 'prediction' column");
  std::unordered_map<std::int64_t, int> table;
  std::int64_t next = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv_detail::split_line(line);
    if (f.size() != header.size()) throw Error(Errc::kParse, "line " + std::to_string(line_no) + ": wrong field count");
    std::int64_t row = next++;
    if (row_col) row = static_cast<std::int64_t>(csv_detail::parse_double(f[*row_col], line_no, "row"));
    const auto& p = f[*pred_col];
    if (p != "0" && p != "1") throw Error(Errc::kParse, "line " + std::to_string(line_no) + ": prediction must be 0 or 1");
    table[row] = p == "1" ? 1 : 0;
  }
  return PredictionsFileModel(std::move(table));
}

inline PredictionsFileModel load_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kParse, "cannot open '" + path + "'");
  return load_predictions_csv(in);
}

/// 1-nearest-neighbour over random-labelled anchors, looking only at the
/// allowed features. An arbitrary, highly irregular decision boundary.
class NearestNeighborModel : public Classifier {
 public:
  NearestNeighborModel(FeatureMatrix anchors, std::vector<int> labels, std::vector<std::size_t> features)
      : anchors_(std::move(anchors)), labels_(std::move(labels)), features_(std::move(features)) {
    if (anchors_.rows() != labels_.size() || anchors_.empty()) {
      throw Error(Errc::kBadParams, "nearest-neighbour model needs one label per anchor");
    }
    for (auto j : features_)
      if (j >= anchors_.cols()) throw Error(Errc::kBadParams, "allowed feature out of range");
  }

  /// Anchors are the first `count` rows of `pool`, labelled by a seeded coin.
  static NearestNeighborModel random_labels(const FeatureMatrix& pool, std::size_t count,
                                            std::vector<std::size_t> features, std::uint64_t seed) {
    count = std::min(count, pool.rows());
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_rng(seed, "nn/labels");
    std::bernoulli_distribution coin(0.5);
    std::vector<int> labels(count);
    for (auto& y : labels) y = coin(rng) ? 1 : 0;
    return NearestNeighborModel(pool.select_rows(idx), std::move(labels), std::move(features));
  }

  int predict(std::span<const double> x, std::int64_t) const override {
    if (x.size() != anchors_.cols()) throw Error(Errc::kDimensionMismatch, "point dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    int label = 0;
    for (std::size_t i = 0; i < anchors_.rows(); ++i) {
      double dist = 0.0;
      for (auto j : features_) {
        const double t = x[j] - anchors_(i, j);
        dist += t * t;
      }
      if (dist < best) {
        best = dist;
        label = labels_[i];
      }
    }
    return label;
  }

 private:
  FeatureMatrix anchors_;
  std::vector<int> labels_;
  std::vector<std::size_t> features_;
};

/// Threshold t such that round(rate * n) of the scores are strictly above t
/// (fewer when scores tie at the cut).
inline double calibrate_threshold(std::vector<double> scores, double rate) {
  if (scores.empty()) throw Error(Errc::kEmptySample, "cannot calibrate on no data");
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error(Errc::kBadParams, "rate must lie in [0, 1]");
  std::sort(scores.begin(), scores.end());
  const auto n = scores.size();
  const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  if (k == 0) return scores.back();
  if (k >= n) return std::nextafter(scores.front(), -std::numeric_limits<double>::infinity());
  return scores[n - k - 1];
}

inline double calibrate_threshold(const LinearThresholdModel& model, const FeatureMatrix& data, double rate) {
  std::vector<double> s(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) s[i] = model.score(data.row(i));
  return calibrate_threshold(std::move(s), rate);
}

/// Feature order of the SSL-schema models.
inline const std::vector<std::string>& ssl_feature_names() {
  static const std::vector<std::string> names{
      "victim_shooting", "age", "victim_assault", "violent_arrests",
      "gang_affiliation", "narcotic_arrests", "trend", "uuw_arrests"};
  return names;
}

struct SslModels {
  LinearThresholdModel age_narc;
  LinearThresholdModel multi_feature;
};

/// Biased risk models over normalized SSL-schema features. age_narc is
/// -53 age + 25 narc > 65; multi_feature weights age 50 and the two
/// victimization counts and narcotics arrests 20 each, with its threshold
/// calibrated to a 10% positive rate on `calibration` (already normalized).
inline SslModels ssl_style_models(const FeatureMatrix& calibration) {
  if (calibration.feature_names() != ssl_feature_names()) {
    throw Error(Errc::kSchemaMismatch, "SSL models need the 8 SSL features in the documented order");
  }
  SslModels m{LinearThresholdModel({0, -53, 0, 0, 0, 25, 0, 0}, 65.0),
              LinearThresholdModel({20, 50, 20, 0, 0, 20, 0, 0}, 0.0)};
  m.multi_feature.set_threshold(calibrate_threshold(m.multi_feature, calibration, 0.10));
  return m;
}

/// Fixed-weight hiring model on normalized (work_exp, hair_length):
/// 1.2 work + 1.4 hair, threshold set so `hire_rate` of `calibration_men`
/// (normalized) is hired.
inline LinearThresholdModel hiring_fair_model(const FeatureMatrix& calibration_men, double hire_rate = 0.27) {
  if (calibration_men.feature_names() != hiring_feature_names()) {
    throw Error(Errc::kSchemaMismatch, "hiring model expects (work_exp, hair_length)");
  }
  LinearThresholdModel m({1.2, 1.4}, 0.0);
  m.set_threshold(calibrate_threshold(m, calibration_men, hire_rate));
  return m;
}

struct LogisticConfig {
  double learning_rate = 0.1;
  std::size_t iterations = 2000;
};

struct LogisticFit {
  LinearThresholdModel model;
  std::vector<double> loss_history;
};

/// Full-batch gradient descent on the mean logistic loss with an intercept.
/// The returned model predicts 1 where the fitted probability exceeds 0.5.
inline LogisticFit train_logistic(const FeatureMatrix& data, const std::vector<int>& labels,
                                  const LogisticConfig& cfg = {}) {
  const std::size_t n = data.rows(), d = data.cols();
  if (labels.size() != n) throw Error(Errc::kShapeMismatch, "one label per row required");
  if (n < d + 1) throw Error(Errc::kBadParams, "need at least d + 1 rows");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(Errc::kBadParams, "labels must be 0/1");
  if (!(cfg.learning_rate > 0.0) || cfg.iterations == 0) throw Error(Errc::kBadConfig, "bad logistic config");

  std::vector<double> w(d, 0.0), grad(d);
  double b = 0.0;
  LogisticFit fit;
  fit.loss_history.reserve(cfg.iterations + 1);
  auto evaluate = [&](bool with_grad) {
    double loss = 0.0, gb = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * data(i, j);
      // log(1 + e^z) - y z, computed stably.
      loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - labels[i] * z;
      if (with_grad) {
        const double r = 1.0 / (1.0 + std::exp(-z)) - labels[i];
        for (std::size_t j = 0; j < d; ++j) grad[j] += r * data(i, j);
        gb += r;
      }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& g : grad) g *= inv;
    return std::pair{loss * inv, gb * inv};
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto [loss, gb] = evaluate(true);
    if (!std::isfinite(loss)) throw Error(Errc::kDiverged, "logistic loss is not finite at iteration " + std::to_string(it));
    fit.loss_history.push_back(loss);
    for (std::size_t j = 0; j < d; ++j) w[j] -= cfg.learning_rate * grad[j];
    b -= cfg.learning_rate * gb;
  }
  const double final_loss = evaluate(false).first;
  if (!std::isfinite(final_loss)) throw Error(Errc::kDiverged, "logistic loss is not finite");
  fit.loss_history.push_back(final_loss);
  fit.model = LinearThresholdModel(std::move(w), -b);
  return fit;
}

}  // namespace fliptest
