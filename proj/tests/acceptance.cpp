// Acceptance suite: one PASS/FAIL line per criterion.
//
//   fliptest_acceptance [--full] [--only 1,4,...] [--seed K]
//
// Criterion 7 (stability ordering) is long and only runs with --full.
// Criterion 9 covers experiments that need external data and is reported as
// excluded. Exit status is 0 when every criterion that ran passed.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "fliptest/fliptest.hpp"
#include "gradient_check.hpp"

using namespace fliptest;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

bool within(double v, double lo, double hi) { return v >= lo && v <= hi; }

FeatureMatrix uniform_matrix(std::size_t n, std::size_t d, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  FeatureMatrix m(n, FeatureMatrix::default_names(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = u(rng);
  return m;
}

FeatureMatrix integer_matrix(std::size_t n, std::size_t d, std::mt19937_64& rng, int lo, int hi) {
  std::uniform_int_distribution<int> u(lo, hi);
  FeatureMatrix m(n, FeatureMatrix::default_names(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = u(rng);
  return m;
}

// ---------------------------------------------------------------------------
// 1. Exact solver vs brute force

Outcome exact_oracle(std::uint64_t seed) {
  std::mt19937_64 rng(substream_seed(seed, "acceptance/exact"));
  std::uniform_int_distribution<std::size_t> pick_n(1, 7), pick_d(1, 3);
  std::size_t mismatches = 0;
  std::string first;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = pick_n(rng), d = pick_d(rng);
    const GroupedDataset data(integer_matrix(n, d, rng, -5, 5),
                              integer_matrix(n, d, rng, -5, 5));
    const double fast = solve_exact(data).total_cost;
    const double slow = brute_force_exact(data).total_cost;
    if (fast != slow) {
      if (mismatches++ == 0) first = fmt(" first at instance %d: %.17g vs %.17g", t, fast, slow);
    }
  }
  return {mismatches == 0, fmt("%zu/200 instances differ", mismatches) + first};
}

// ---------------------------------------------------------------------------
// 2. Flipset parity property

Outcome parity_property(std::uint64_t seed) {
  std::mt19937_64 rng(substream_seed(seed, "acceptance/parity"));
  std::uniform_int_distribution<std::size_t> pick_n(1, 8), pick_d(1, 3);
  std::normal_distribution<double> z(0.0, 1.0);
  std::size_t violations = 0, equal_cases = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = pick_n(rng), d = pick_d(rng);
    // Integer points half the time so ties and boundary hits occur.
    const bool integral = t % 2 == 0;
    auto draw = [&] {
      return integral ? integer_matrix(n, d, rng, -3, 3) : uniform_matrix(n, d, rng, -2.0, 2.0);
    };
    const GroupedDataset data(draw(), draw());
    std::vector<double> w(d);
    for (auto& v : w) v = z(rng);
    const LinearThresholdModel h(w, integral ? std::round(z(rng)) : z(rng));
    const AuditResult a = demographic_parity_audit(data, h, solve_exact(data));
    const bool balanced = a.parity.flip_pos == a.parity.flip_neg;
    const bool parity = a.parity.positives_a == a.parity.positives_b;
    equal_cases += parity ? 1 : 0;
    violations += balanced != parity ? 1 : 0;
  }
  return {violations == 0,
          fmt("%zu violations over 500 instances (%zu with equal positive counts)", violations, equal_cases)};
}

// ---------------------------------------------------------------------------
// 3. Gradient checks

Outcome gradient_checks(std::uint64_t seed) {
  std::mt19937_64 rng(substream_seed(seed, "acceptance/gradients"));
  double worst_g = 0.0, worst_c = 0.0;
  std::size_t params = 0;
  int redraws = 0;
  for (int t = 0; t < 20; ++t) {
    const auto r = testutil::gradient_trial(1 + static_cast<std::size_t>(t % 3), rng);
    worst_g = std::max(worst_g, r.generator_error);
    worst_c = std::max(worst_c, r.critic_error);
    params += r.parameters;
    redraws += r.redraws;
  }
  const bool pass = worst_g <= 1e-4 && worst_c <= 1e-4;
  return {pass, fmt("max rel error generator %.2e, critic %.2e over 20 nets (%zu parameters, %d kink redraws)",
                    worst_g, worst_c, params, redraws)};
}

// ---------------------------------------------------------------------------
// 4. Geometric arrests

Outcome geometric(std::uint64_t seed) {
  constexpr std::size_t kFull = 10000, kSub = 2000;
  const GroupedDataset full = gen_geometric_arrests(kFull, substream_seed(seed, "data"));
  const GroupedDataset data = subsample_groups(full, kSub, substream_seed(seed, "subsample"));
  const ArrestsModel h(substream_seed(seed, "classifier"));
  const AuditResult a = demographic_parity_audit(data, h, solve_exact(data));
  const double frac = static_cast<double>(a.parity.flip_pos) / static_cast<double>(kSub);
  // |F-| <= 5 at n = 10,000 scales to <= 1 at n = 2,000.
  const std::size_t neg_cap = 5 * kSub / kFull;
  double sign = 0.0, diff = 0.0;
  if (a.positive_report) {
    sign = a.positive_report->mean_sign[0];
    diff = a.positive_report->mean_diff[0];
  }
  const bool ok_pos = within(frac, 0.24, 0.28);
  const bool ok_neg = a.parity.flip_neg <= neg_cap;
  const bool ok_sign = sign == 1.0;
  const bool ok_diff = within(diff, 1.30, 1.60);
  return {ok_pos && ok_neg && ok_sign && ok_diff,
          fmt("n=%zu: |F+|/n=%.4f %s [0.24,0.28]; |F-|=%zu %s <=%zu; mean_sign=%.2f %s 1.00; mean_diff=%.3f %s "
              "[1.30,1.60] (population values under the exact map: 0.2813, 1.646)",
              kSub, frac, ok_pos ? "in" : "NOT in", a.parity.flip_neg, ok_neg ? "" : "NOT", neg_cap, sign,
              ok_sign ? "=" : "!=", diff, ok_diff ? "in" : "NOT in")};
}

// ---------------------------------------------------------------------------
// 5. Control experiment

Outcome control(std::uint64_t seed, std::size_t steps) {
  ControlConfig cfg;
  cfg.seed = seed;
  cfg.train.generator_steps = steps;
  cfg.train.seed = substream_seed(seed, "train");
  const ControlResult r = control_experiment(cfg);
  const double pos_rate = static_cast<double>(r.flip_pos) / static_cast<double>(r.classified_positive);
  const double neg_rate = static_cast<double>(r.flip_neg) / static_cast<double>(r.classified_negative);
  const auto& m = r.mean_abs_displacement;
  const double kept = std::max({m[0], m[1], m[2]});
  bool moved_ok = true;
  for (std::size_t j = 3; j < 6; ++j) moved_ok = moved_ok && within(m[j], 1.7, 2.3);
  const bool pass = pos_rate <= 0.05 && neg_rate <= 0.05 && kept <= 0.05 && moved_ok;
  return {pass, fmt("%zu steps: |F+|=%zu/%zu (%.1f%%), |F-|=%zu/%zu (%.1f%%), limit 5%%; displacement "
                    "%.3f %.3f %.3f (limit 0.05) | %.3f %.3f %.3f (2.0 +- 0.3)",
                    steps, r.flip_pos, r.classified_positive, 100 * pos_rate, r.flip_neg, r.classified_negative,
                    100 * neg_rate, m[0], m[1], m[2], m[3], m[4], m[5])};
}

// ---------------------------------------------------------------------------
// 6 and 8. Hiring experiment

/// Training draw, joint normalizer, fair model and the two trained maps,
/// built on first use and shared by criteria 6 and 8.
class Hiring {
 public:
  explicit Hiring(std::uint64_t seed) : seed_(seed) {}

  static constexpr std::size_t kN = 10000;

  const GroupedDataset& train_raw() {
    if (!train_raw_) train_raw_ = gen_two_feature_hiring(kN, substream_seed(seed_, "hiring/train"));
    return *train_raw_;
  }
  const Normalizer& normalizer() {
    if (!norm_) norm_ = fit_normalizer(train_raw());
    return *norm_;
  }
  GroupedDataset normalized(const GroupedDataset& raw) { return normalizer().transform(raw); }

  /// Fixed-weight model on normalized features, 27% of training men hired.
  const LinearThresholdModel& model() {
    if (!model_) model_ = hiring_fair_model(normalized(train_raw()).group_b);
    return *model_;
  }
  TrainConfig config(std::string_view stream) const {
    TrainConfig c;  // lambda 1e-4, batch 64, 20,000 steps
    c.seed = substream_seed(seed_, stream);
    return c;
  }
  const Generator& forward() {
    if (!forward_) forward_ = train(normalized(train_raw()), config("hiring/forward"));
    return *forward_;
  }
  const Generator& reverse() {
    if (!reverse_) reverse_ = train(normalized(train_raw()).swapped(), config("hiring/reverse"));
    return *reverse_;
  }
  GroupedDataset test_set(std::uint64_t k) {
    return normalized(gen_two_feature_hiring(kN, substream_seed(seed_, "hiring/test", k)));
  }

 private:
  std::uint64_t seed_;
  std::optional<GroupedDataset> train_raw_;
  std::optional<Normalizer> norm_;
  std::optional<LinearThresholdModel> model_;
  std::optional<Generator> forward_, reverse_;
};

Outcome table1(Hiring& hiring, std::uint64_t seed) {
  std::vector<GroupedDataset> trials;
  for (std::uint64_t k = 0; k < 10; ++k) trials.push_back(hiring.test_set(k));
  const ValidationReport r =
      validate_generator(trials[0], trials, hiring.forward(), {}, 2000, substream_seed(seed, "subsample"));
  double worst_ks = 0.0, worst_mse = 0.0;
  for (std::size_t t = 0; t < r.trials; ++t) {
    for (std::size_t j = 0; j < r.feature_names.size(); ++j) {
      worst_ks = std::max(worst_ks, r.ks_stat[t][j]);
      worst_mse = std::max(worst_mse, std::abs(r.mse_diff[t][j]));
    }
  }
  const double rel = std::abs(r.dist_gan - r.dist_exact) / r.dist_exact;
  const bool pass = worst_ks <= 0.15 && worst_mse <= 0.5 && rel <= 0.25;
  std::string per_feature;
  for (std::size_t j = 0; j < r.feature_names.size(); ++j) {
    per_feature += fmt("%s ks %.3f+-%.3f msediff %.3f+-%.3f; ", r.feature_names[j].c_str(), r.ks_summary[j].mean,
                       r.ks_summary[j].std_dev, r.mse_summary[j].mean, r.mse_summary[j].std_dev);
  }
  return {pass, per_feature + fmt("max ks %.3f (<=0.15), max |msediff| %.3f (<=0.5), dist exact %.3f gan %.3f "
                                  "(%.1f%%, <=25%%)",
                                  worst_ks, worst_mse, r.dist_exact, r.dist_gan, 100 * rel)};
}

Outcome reverse_check(Hiring& hiring) {
  const GroupedDataset test = hiring.test_set(100);
  const ReverseConsistency rc = reverse_consistency(test, hiring.model(), hiring.forward(), hiring.reverse());
  // Forward F+ pairs with reverse F-, forward F- with reverse F+.
  auto rel = [](std::size_t a, std::size_t b) {
    const double hi = static_cast<double>(std::max(a, b));
    return hi == 0.0 ? 0.0 : std::abs(static_cast<double>(a) - static_cast<double>(b)) / hi;
  };
  const double r1 = rel(rc.fwd_pos, rc.rev_neg), r2 = rel(rc.fwd_neg, rc.rev_pos);
  const bool pass = r1 <= 0.35 && r2 <= 0.35;
  return {pass, fmt("forward |F+|=%zu |F-|=%zu, reverse |F'-|=%zu |F'+|=%zu; relative gaps %.1f%% and %.1f%% "
                    "(<=35%%)",
                    rc.fwd_pos, rc.fwd_neg, rc.rev_neg, rc.rev_pos, 100 * r1, 100 * r2)};
}

// ---------------------------------------------------------------------------
// 7. Stability ordering

Outcome stability(std::uint64_t seed, std::size_t draws, std::size_t steps, unsigned threads) {
  bool pass = true;
  std::string detail = fmt("draws=%zu, gan steps=%zu:", draws, steps);
  for (std::size_t d : {2, 4, 8}) {
    StabilityConfig cfg;
    cfg.dims = d;
    cfg.n = 500;
    cfg.draws = draws;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.train.generator_steps = steps;
    cfg.method = MapMethod::kExact;
    const StabilityResult exact = stability_harness(cfg);
    cfg.method = MapMethod::kGan;
    const StabilityResult gan = stability_harness(cfg);
    std::size_t below = 0;
    for (std::size_t j = 0; j < d; ++j) below += gan.variance[j] < exact.variance[j] ? 1 : 0;
    pass = pass && below == d;
    const double max_exact = *std::max_element(exact.variance.begin(), exact.variance.end());
    const double max_gan = *std::max_element(gan.variance.begin(), gan.variance.end());
    detail += fmt(" d=%zu gan<exact on %zu/%zu (max var exact %.3g gan %.3g)", d, below, d, max_exact, max_gan);
    if (d >= 4) {
      StabilityConfig ones = cfg;
      ones.method = MapMethod::kExact;
      ones.probe.assign(d, 1.0);
      const StabilityResult r = stability_harness(ones);
      double norm = 0.0;
      for (double v : r.mean) norm += v * v;
      norm = std::sqrt(norm);
      const double probe_norm = std::sqrt(static_cast<double>(d));
      pass = pass && norm < probe_norm;
      detail += fmt(", ones-probe mean norm %.3f %s %.3f;", norm, norm < probe_norm ? "<" : ">=", probe_norm);
    } else {
      detail += ";";
    }
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fliptest acceptance suite"};
  bool full = false;
  std::string only;
  std::uint64_t seed = 0;
  std::size_t control_steps = 20000, stability_draws = 30, stability_steps = 4000;
  app.add_flag("--full", full, "also run the long stability criterion (7)");
  app.add_option("--only", only, "comma separated criteria to run");
  app.add_option("--seed", seed, "root seed")->capture_default_str();
  app.add_option("--control-steps", control_steps, "generator steps for criterion 5 (>= 5000)")->capture_default_str();
  app.add_option("--stability-draws", stability_draws, "draws for criterion 7 (>= 30)")->capture_default_str();
  app.add_option("--stability-steps", stability_steps, "generator steps per GAN in criterion 7")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (!only.empty()) {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
  }
  if (control_steps < 5000 || stability_draws < 30) {
    std::cerr << "--control-steps must be >= 5000 and --stability-draws >= 30\n";
    return 2;
  }
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FLIPTEST_THREADS")) threads = static_cast<unsigned>(std::max(1, std::atoi(env)));

  Hiring hiring(seed);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    bool long_running;
  };
  const std::vector<Criterion> criteria = {
      {1, "exact solver equals brute force", [&] { return exact_oracle(seed); }, false},
      {2, "flipset balance iff equal positive counts", [&] { return parity_property(seed); }, false},
      {3, "loss gradients match finite differences", [&] { return gradient_checks(seed); }, false},
      {4, "geometric arrests flipsets", [&] { return geometric(seed); }, false},
      {5, "control experiment", [&] { return control(seed, control_steps); }, false},
      {6, "hiring validation magnitudes", [&] { return table1(hiring, seed); }, false},
      {7, "stability ordering", [&] { return stability(seed, stability_draws, stability_steps, threads); }, true},
      {8, "reverse-map consistency", [&] { return reverse_check(hiring); }, false},
  };

  bool all_pass = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    if (c.long_running && !full) {
      std::cout << "SKIP " << c.id << ' ' << c.name << ": long-running, pass --full to run" << std::endl;
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << ' ' << c.name << ": " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  if (selected.empty() || selected.count(9)) {
    std::cout << "EXCLUDED 9 external-data experiments: SSL flipset counts, law-school comparison and FairTest "
                 "side-by-side need datasets or tools outside this repository"
              << std::endl;
  }
  return all_pass ? 0 : 1;
}
