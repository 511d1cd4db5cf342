#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fliptest/core_data.hpp"
#include "fliptest/mlp.hpp"
#include "fliptest/random.hpp"

namespace fliptest {

inline constexpr std::size_t kHiddenWidth = 128;

/// Transport map G: R^d -> R^d approximated by an MLP (d, 128, 128, d).
struct Generator {
  Mlp net;

  std::size_t dims() const { return net.input_dim(); }
  friend bool operator==(const Generator&, const Generator&) = default;
};

/// Scalar critic D: R^d -> R, an MLP (d, 128, 128, 1).
struct Critic {
  Mlp net;

  std::size_t dims() const { return net.input_dim(); }
  friend bool operator==(const Critic&, const Critic&) = default;
};

struct TrainConfig {
  double lambda = 1e-4;
  std::size_t batch_size = 64;
  std::size_t generator_steps = 20000;
  std::size_t critic_steps_per_gen = 5;
  double learning_rate = 5e-5;
  double clip = 0.01;
  std::uint64_t seed = 0;
  double init_scale = 0.05;
  std::size_t hidden_width = kHiddenWidth;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::kBadConfig, m); };
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (generator_steps < 1) fail("generator_steps must be >= 1");
    if (critic_steps_per_gen < 1) fail("critic_steps_per_gen must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(clip > 0.0)) fail("clip must be > 0");
    if (!(init_scale >= 0.0)) fail("init_scale must be >= 0");
    if (hidden_width < 1) fail("hidden_width must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline Generator make_generator(std::size_t d, Rng& rng, double init_scale = 0.05,
                                std::size_t hidden = kHiddenWidth) {
  return Generator{Mlp::uniform_init({d, hidden, hidden, d}, rng, init_scale)};
}

inline Critic make_critic(std::size_t d, Rng& rng, double init_scale = 0.05,
                          std::size_t hidden = kHiddenWidth) {
  return Critic{Mlp::uniform_init({d, hidden, hidden, 1}, rng, init_scale)};
}

/// A generator whose parameters realize the identity map exactly:
/// hidden units carry relu(x) and relu(-x), the output takes their difference.
inline Generator identity_generator(std::size_t d, std::size_t hidden = kHiddenWidth) {
  if (2 * d > hidden) throw Error(Errc::kBadParams, "identity generator needs hidden >= 2d");
  Generator g{Mlp({d, hidden, hidden, d})};
  auto& layers = g.net.layers();
  for (std::size_t j = 0; j < d; ++j) {
    const auto pos = static_cast<Eigen::Index>(j);
    const auto neg = static_cast<Eigen::Index>(d + j);
    layers[0].weight(pos, pos) = 1.0;
    layers[0].weight(pos, neg) = -1.0;
    layers[1].weight(pos, pos) = 1.0;
    layers[1].weight(neg, neg) = 1.0;
    layers[2].weight(pos, pos) = 1.0;
    layers[2].weight(neg, pos) = -1.0;
  }
  return g;
}

/// A critic with all weights zero and output bias `value`, i.e. D == value.
inline Critic constant_critic(std::size_t d, double value, std::size_t hidden = kHiddenWidth) {
  Critic c{Mlp({d, hidden, hidden, 1})};
  c.net.layers().back().bias(0) = value;
  return c;
}

inline Eigen::MatrixXd to_eigen(const FeatureMatrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  return out;
}

namespace detail {

inline void check_batch(const Eigen::MatrixXd& batch, std::size_t d, const char* what) {
  if (batch.rows() == 0) throw Error(Errc::kEmptySample, std::string(what) + " batch is empty");
  if (static_cast<std::size_t>(batch.cols()) != d) {
    throw Error(Errc::kDimensionMismatch, std::string(what) + " batch has " +
                                              std::to_string(batch.cols()) +
                                              " features, networks expect " + std::to_string(d));
  }
}

inline double mean_cost(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const CostFunction& c) {
  const Eigen::Index n = x.rows(), d = x.cols();
  std::vector<double> xr(static_cast<std::size_t>(d)), yr(static_cast<std::size_t>(d));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      xr[static_cast<std::size_t>(j)] = x(i, j);
      yr[static_cast<std::size_t>(j)] = y(i, j);
    }
    total += c.evaluate(xr, yr);
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

/// (1/n) sum D(G(x)) + (lambda/n) sum c(x, G(x)) over the batch.
inline double generator_loss(const Generator& gen, const Critic& critic, const Eigen::MatrixXd& batch,
                             double lambda, const CostFunction& c = {}) {
  detail::check_batch(batch, gen.dims(), "source");
  const Eigen::MatrixXd moved = gen.net.forward(batch);
  const double critic_term = critic.net.forward(moved).mean();
  return critic_term + lambda * detail::mean_cost(batch, moved, c);
}

/// (1/n') sum D(x') - (1/n) sum D(G(x)).
inline double critic_loss(const Critic& critic, const Generator& gen, const Eigen::MatrixXd& batch_a,
                          const Eigen::MatrixXd& batch_b) {
  detail::check_batch(batch_a, gen.dims(), "source");
  detail::check_batch(batch_b, critic.dims(), "target");
  return critic.net.forward(batch_b).mean() - critic.net.forward(gen.net.forward(batch_a)).mean();
}

struct LossGradient {
  double loss = 0.0;
  MlpGradient grad;
};

namespace detail {

/// Zeroes `g`, allocating only when its shapes do not match `net`.
inline void reset_gradient(const Mlp& net, MlpGradient& g) {
  const auto& layers = net.layers();
  bool fits = g.weight.size() == layers.size();
  for (std::size_t l = 0; fits && l < layers.size(); ++l) {
    fits = g.weight[l].rows() == layers[l].weight.rows() && g.weight[l].cols() == layers[l].weight.cols();
  }
  if (!fits) {
    g = net.zero_gradient();
    return;
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    g.weight[l].setZero();
    g.bias[l].setZero();
  }
}

}  // namespace detail

/// generator_loss and its gradient with respect to the generator parameters,
/// written into `out` (its buffers are reused across calls).
inline void generator_loss_gradient(const Generator& gen, const Critic& critic, const Eigen::MatrixXd& batch,
                                    double lambda, const CostFunction& c, LossGradient& out) {
  detail::check_batch(batch, gen.dims(), "source");
  const Eigen::Index n = batch.rows(), d = batch.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  Mlp::Tape gen_tape, critic_tape;
  const Eigen::MatrixXd moved = gen.net.forward(batch, gen_tape);
  const Eigen::MatrixXd scores = critic.net.forward(moved, critic_tape);

  out.loss = scores.mean();
  detail::reset_gradient(gen.net, out.grad);
  Eigen::MatrixXd grad_moved =
      critic.net.backward(critic_tape, Eigen::MatrixXd::Constant(n, 1, inv_n), nullptr);

  if (lambda != 0.0) {
    std::vector<double> xr(static_cast<std::size_t>(d)), yr(xr.size()), gr(xr.size());
    double total_cost = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        xr[static_cast<std::size_t>(j)] = batch(i, j);
        yr[static_cast<std::size_t>(j)] = moved(i, j);
      }
      total_cost += c.evaluate(xr, yr);
      c.gradient_wrt_second(xr, yr, gr);
      for (Eigen::Index j = 0; j < d; ++j) grad_moved(i, j) += lambda * inv_n * gr[static_cast<std::size_t>(j)];
    }
    out.loss += lambda * total_cost * inv_n;
  }
  gen.net.backward(gen_tape, grad_moved, &out.grad);
}

inline LossGradient generator_loss_gradient(const Generator& gen, const Critic& critic,
                                            const Eigen::MatrixXd& batch, double lambda,
                                            const CostFunction& c = {}) {
  LossGradient out;
  generator_loss_gradient(gen, critic, batch, lambda, c, out);
  return out;
}

/// critic_loss and its gradient with respect to the critic parameters,
/// written into `out`.
inline void critic_loss_gradient(const Critic& critic, const Generator& gen, const Eigen::MatrixXd& batch_a,
                                 const Eigen::MatrixXd& batch_b, LossGradient& out) {
  detail::check_batch(batch_a, gen.dims(), "source");
  detail::check_batch(batch_b, critic.dims(), "target");
  const Eigen::MatrixXd moved = gen.net.forward(batch_a);
  Mlp::Tape real_tape, fake_tape;
  const double real = critic.net.forward(batch_b, real_tape).mean();
  const double fake = critic.net.forward(moved, fake_tape).mean();
  out.loss = real - fake;
  detail::reset_gradient(critic.net, out.grad);
  const Eigen::Index nb = batch_b.rows(), na = batch_a.rows();
  critic.net.backward(real_tape, Eigen::MatrixXd::Constant(nb, 1, 1.0 / static_cast<double>(nb)),
                      &out.grad);
  critic.net.backward(fake_tape, Eigen::MatrixXd::Constant(na, 1, -1.0 / static_cast<double>(na)),
                      &out.grad);
}

inline LossGradient critic_loss_gradient(const Critic& critic, const Generator& gen,
                                         const Eigen::MatrixXd& batch_a,
                                         const Eigen::MatrixXd& batch_b) {
  LossGradient out;
  critic_loss_gradient(critic, gen, batch_a, batch_b, out);
  return out;
}

/// Thrown when a loss turns NaN/inf. Carries the generator as it was at the
/// start of the failing step.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, Generator snapshot, const std::string& what)
      : Error(Errc::kNonFiniteLoss, "step " + std::to_string(step) + ": " + what),
        step_(step), snapshot_(std::move(snapshot)) {}

  std::size_t step() const noexcept { return step_; }
  const Generator& snapshot() const noexcept { return snapshot_; }

 private:
  std::size_t step_;
  Generator snapshot_;
};

struct TrainProgress {
  std::size_t step = 0;
  double critic_loss = 0.0;
  double generator_loss = 0.0;
  double critic_max_abs = 0.0;  // largest |parameter| after any clipped critic update this step
};

using TrainObserver = std::function<void(const TrainProgress&)>;

namespace detail {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline RowMajorMatrix to_row_major(const FeatureMatrix& m) {
  return Eigen::Map<const RowMajorMatrix>(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                                          static_cast<Eigen::Index>(m.cols()));
}

/// Uniform draw with replacement.
inline void draw_batch(const RowMajorMatrix& pool, std::size_t size, Rng& rng, Eigen::MatrixXd& out) {
  std::uniform_int_distribution<Eigen::Index> pick(0, pool.rows() - 1);
  out.resize(static_cast<Eigen::Index>(size), pool.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = pool.row(pick(rng));
}

}  // namespace detail

/// Trains a cost-penalized Wasserstein generator mapping group_a onto group_b.
///
/// Each of `generator_steps` iterations performs `critic_steps_per_gen` critic
/// updates (minimize critic_loss, then clip every critic parameter to
/// [-clip, clip]) and one generator update (minimize generator_loss), all with
/// RMSProp and fresh batches. Deterministic for a fixed config and data.
inline Generator train(const GroupedDataset& data, const TrainConfig& cfg, const CostFunction& c = {},
                       const TrainObserver& observer = {}) {
  cfg.validate();
  if (data.group_a.empty() || data.group_b.empty()) {
    throw Error(Errc::kEmptyDataset, "both groups must be nonempty to train a generator");
  }
  const std::size_t d = data.dims();
  Rng init_rng = make_rng(cfg.seed, "init");
  Generator gen = make_generator(d, init_rng, cfg.init_scale, cfg.hidden_width);
  Critic critic = make_critic(d, init_rng, cfg.init_scale, cfg.hidden_width);
  critic.net.clip(cfg.clip);

  RmsProp gen_opt(gen.net, cfg.learning_rate);
  RmsProp critic_opt(critic.net, cfg.learning_rate);
  Rng batch_rng = make_rng(cfg.seed, "batches");

  const auto pool_a = detail::to_row_major(data.group_a);
  const auto pool_b = detail::to_row_major(data.group_b);
  Eigen::MatrixXd batch_a, batch_b;
  LossGradient critic_lg, gen_lg;
  Generator before = gen;  // storage reused every step

  for (std::size_t step = 0; step < cfg.generator_steps; ++step) {
    TrainProgress progress{step, 0.0, 0.0};
    for (std::size_t k = 0; k < cfg.critic_steps_per_gen; ++k) {
      detail::draw_batch(pool_a, cfg.batch_size, batch_rng, batch_a);
      detail::draw_batch(pool_b, cfg.batch_size, batch_rng, batch_b);
      critic_loss_gradient(critic, gen, batch_a, batch_b, critic_lg);
      if (!std::isfinite(critic_lg.loss)) throw TrainingDiverged(step, gen, "critic loss is not finite");
      critic_opt.step(critic.net, critic_lg.grad);
      critic.net.clip(cfg.clip);
      progress.critic_loss = critic_lg.loss;
      if (observer) progress.critic_max_abs = std::max(progress.critic_max_abs, critic.net.max_abs_parameter());
    }
    detail::draw_batch(pool_a, cfg.batch_size, batch_rng, batch_a);
    generator_loss_gradient(gen, critic, batch_a, cfg.lambda, c, gen_lg);
    if (!std::isfinite(gen_lg.loss)) throw TrainingDiverged(step, gen, "generator loss is not finite");
    before = gen;
    gen_opt.step(gen.net, gen_lg.grad);
    if (!gen.net.all_finite()) throw TrainingDiverged(step, before, "generator parameters are not finite");
    progress.generator_loss = gen_lg.loss;
    if (observer) observer(progress);
  }
  return gen;
}

/// Row-wise G(x). Output rows are synthetic (row id -1).
inline FeatureMatrix map_points(const Generator& gen, const FeatureMatrix& points) {
  if (points.cols() != gen.dims()) {
    throw Error(Errc::kDimensionMismatch, "generator maps " + std::to_string(gen.dims()) +
                                              "-d points, got " + std::to_string(points.cols()));
  }
  FeatureMatrix out(points.rows(), points.feature_names());
  out.mark_synthetic();
  constexpr std::size_t kChunk = 4096;
  const auto all = detail::to_row_major(points);
  for (std::size_t begin = 0; begin < points.rows(); begin += kChunk) {
    const std::size_t len = std::min(kChunk, points.rows() - begin);
    const Eigen::MatrixXd block =
        all.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(len));
    const Eigen::MatrixXd mapped = gen.net.forward(block);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < out.cols(); ++j)
        out(begin + i, j) = mapped(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  out.check_finite();
  return out;
}

inline std::vector<double> map_point(const Generator& gen, std::span<const double> x) {
  if (x.size() != gen.dims()) throw Error(Errc::kDimensionMismatch, "point dimension mismatch");
  Eigen::MatrixXd in(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) in(0, static_cast<Eigen::Index>(j)) = x[j];
  const Eigen::MatrixXd y = gen.net.forward(in);
  return std::vector<double>(y.data(), y.data() + y.size());
}

}  // namespace fliptest
