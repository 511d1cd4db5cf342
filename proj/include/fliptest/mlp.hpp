#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fliptest/errors.hpp"
#include "fliptest/random.hpp"

namespace fliptest {

/// One fully connected layer, z = x W + b with x a row vector.
struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;  // 1 x fan_out
};

/// Parameter-shaped accumulator for gradients and optimizer state.
struct MlpGradient {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::RowVectorXd> bias;

  void set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }
};

/// Feed-forward net with ReLU hidden layers and a linear output layer.
/// Batches are matrices with one point per row.
class Mlp {
 public:
  /// Activations recorded by a forward pass for the backward pass.
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input of layer l
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of layer l
  };

  Mlp() = default;

  /// All parameters zero.
  explicit Mlp(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw Error(Errc::kBadParams, "an MLP needs at least two layer sizes");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      if (dims_[l] == 0 || dims_[l + 1] == 0) throw Error(Errc::kBadParams, "zero-width layer");
      const auto in = static_cast<Eigen::Index>(dims_[l]);
      const auto out = static_cast<Eigen::Index>(dims_[l + 1]);
      layers_.push_back({Eigen::MatrixXd::Zero(in, out), Eigen::RowVectorXd::Zero(out)});
    }
  }

  /// Weights uniform in [-scale, scale], biases zero.
  static Mlp uniform_init(std::vector<std::size_t> dims, Rng& rng, double scale) {
    Mlp net(std::move(dims));
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& layer : net.layers_) {
      // Row-major fill order so the draw sequence matches the serialized layout.
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = u(rng);
    }
    return net;
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    check_input(x);
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = h * layers_[l].weight;
      z.rowwise() += layers_[l].bias;
      if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
      h = std::move(z);
    }
    return h;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const {
    check_input(x);
    tape.inputs.resize(layers_.size());
    tape.pre.resize(layers_.size());
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      tape.inputs[l] = h;
      Eigen::MatrixXd z = h * layers_[l].weight;
      z.rowwise() += layers_[l].bias;
      tape.pre[l] = z;
      h = l + 1 < layers_.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return h;
  }

  /// Back-propagates dL/d(output) through the recorded pass. Adds parameter
  /// gradients into `grad` when given and returns dL/d(input).
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& grad_out,
                           MlpGradient* grad) const {
    Eigen::MatrixXd delta = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) {
        delta = delta.cwiseProduct((tape.pre[l].array() > 0.0).cast<double>().matrix());
      }
      if (grad) {
        grad->weight[l].noalias() += tape.inputs[l].transpose() * delta;
        grad->bias[l] += delta.colwise().sum();
      }
      delta = delta * layers_[l].weight.transpose();
    }
    return delta;
  }

  MlpGradient zero_gradient() const {
    MlpGradient g;
    for (const auto& l : layers_) {
      g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Eigen::RowVectorXd::Zero(l.bias.size()));
    }
    return g;
  }

  /// Clamps every weight and bias into [-limit, limit].
  void clip(double limit) {
    for (auto& l : layers_) {
      l.weight = l.weight.cwiseMax(-limit).cwiseMin(limit);
      l.bias = l.bias.cwiseMax(-limit).cwiseMin(limit);
    }
  }

  double max_abs_parameter() const {
    double m = 0.0;
    for (const auto& l : layers_) {
      m = std::max(m, l.weight.cwiseAbs().maxCoeff());
      m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    }
    return m;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  /// Parameters in layer order; each layer's weights row-major, then biases.
  std::vector<double> flat_parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j) out.push_back(l.weight(i, j));
      for (Eigen::Index j = 0; j < l.bias.size(); ++j) out.push_back(l.bias(j));
    }
    return out;
  }

  void set_flat_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) {
      throw Error(Errc::kShapeMismatch, "expected " + std::to_string(parameter_count()) +
                                            " parameters, got " + std::to_string(p.size()));
    }
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = p[k++];
      for (Eigen::Index j = 0; j < l.bias.size(); ++j) l.bias(j) = p[k++];
    }
  }

  /// Same layout as flat_parameters().
  static std::vector<double> flatten(const MlpGradient& g) {
    std::vector<double> out;
    for (std::size_t l = 0; l < g.weight.size(); ++l) {
      for (Eigen::Index i = 0; i < g.weight[l].rows(); ++i)
        for (Eigen::Index j = 0; j < g.weight[l].cols(); ++j) out.push_back(g.weight[l](i, j));
      for (Eigen::Index j = 0; j < g.bias[l].size(); ++j) out.push_back(g.bias[l](j));
    }
    return out;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.dims_ != b.dims_) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias)
        return false;
    }
    return true;
  }

 private:
  void check_input(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) {
      throw Error(Errc::kDimensionMismatch, "network expects " + std::to_string(input_dim()) +
                                                " inputs, got " + std::to_string(x.cols()));
    }
  }

  std::vector<std::size_t> dims_;
  std::vector<DenseLayer> layers_;
};

/// RMSProp: a <- decay a + (1 - decay) g^2;  p <- p - lr g / (sqrt(a) + eps).
class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(const Mlp& net, double learning_rate, double decay = 0.9, double epsilon = 1e-8)
      : mean_square_(net.zero_gradient()), learning_rate_(learning_rate), decay_(decay),
        epsilon_(epsilon) {}

  void step(Mlp& net, const MlpGradient& grad) {
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].weight, mean_square_.weight[l], grad.weight[l]);
      update(layers[l].bias, mean_square_.bias[l], grad.bias[l]);
    }
  }

  const MlpGradient& mean_square() const noexcept { return mean_square_; }

 private:
  template <typename M>
  void update(M& param, M& acc, const M& g) {
    acc.array() = decay_ * acc.array() + (1.0 - decay_) * g.array().square();
    param.array() -= learning_rate_ * g.array() / (acc.array().sqrt() + epsilon_);
  }

  MlpGradient mean_square_;
  double learning_rate_ = 5e-5;
  double decay_ = 0.9;
  double epsilon_ = 1e-8;
};

}  // namespace fliptest
