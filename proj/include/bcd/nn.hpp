#pragma once

// Parameterized layers, the named-parameter registry used by the optimizer
// and checkpoints, and SGD with momentum.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bcd/ops.hpp"

namespace bcd {

using Rng = std::mt19937_64;

/// Named trainable tensors plus named non-trainable buffers (BN running stats).
class ParamList {
 public:
  struct Param {
    std::string name;
    Tensor* tensor;
  };
  struct Buffer {
    std::string name;
    std::vector<double>* values;
  };

  void add(std::string name, Tensor& t) { params_.push_back({std::move(name), &t}); }
  void add_buffer(std::string name, std::vector<double>& v) { buffers_.push_back({std::move(name), &v}); }

  const std::vector<Param>& params() const { return params_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

 private:
  std::vector<Param> params_;
  std::vector<Buffer> buffers_;
};

/// Uniform fan-in scaling: U(-sqrt(3/fan_in), sqrt(3/fan_in)), unit-variance preserving.
inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

struct Conv1x1Layer {
  Tensor weight;  // out × in
  Tensor bias;    // out

  Conv1x1Layer() = default;
  Conv1x1Layer(std::size_t in, std::size_t out, Rng& rng)
      : weight(uniform_fan_in({out, in}, in, rng)), bias(uniform_fan_in({out}, in, rng)) {}

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor operator()(const Tensor& x) const { return conv1x1(x, weight, bias); }

  void collect(ParamList& list, const std::string& prefix) {
    list.add(prefix + ".weight", weight);
    list.add(prefix + ".bias", bias);
  }
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels)
      : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)), state(channels) {}

  Tensor operator()(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, state, training); }

  void collect(ParamList& list, const std::string& prefix) {
    list.add(prefix + ".gamma", gamma);
    list.add(prefix + ".beta", beta);
    list.add_buffer(prefix + ".running_mean", state.running_mean);
    list.add_buffer(prefix + ".running_var", state.running_var);
  }
};

/// 1×1 conv followed by batch norm; the activation is left to the caller.
struct ConvBn {
  Conv1x1Layer conv;
  BatchNormLayer bn;

  ConvBn() = default;
  ConvBn(std::size_t in, std::size_t out, Rng& rng) : conv(in, out, rng), bn(out) {}

  Tensor operator()(const Tensor& x, bool training) { return bn(conv(x), training); }

  void collect(ParamList& list, const std::string& prefix) {
    conv.collect(list, prefix + ".conv");
    bn.collect(list, prefix + ".bn");
  }
};

struct SgdSettings {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// One classical-momentum step: v <- mu*v + (g + wd*p); p <- p - lr*v.
inline void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                     const SgdSettings& s) {
  require(s.lr > 0.0, "sgd_step: learning rate must be positive");
  require(params.size() == velocity.size() && (grads.empty() || grads.size() == params.size()),
          "sgd_step: parameter, gradient and velocity lengths differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = (grads.empty() ? 0.0 : grads[i]) + s.weight_decay * params[i];
    velocity[i] = s.momentum * velocity[i] + g;
    params[i] -= s.lr * velocity[i];
  }
}

/// SGD over a ParamList; velocity buffers are created lazily in registry order.
class Sgd {
 public:
  explicit Sgd(SgdSettings settings) : settings_(settings) {}

  void set_lr(double lr) { settings_.lr = lr; }
  const SgdSettings& settings() const { return settings_; }

  void step(ParamList& list) {
    const auto& params = list.params();
    if (velocity_.empty())
      for (const auto& p : params) velocity_.emplace_back(p.tensor->numel(), 0.0);
    require(velocity_.size() == params.size(), "Sgd: parameter registry changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k)
      sgd_step(params[k].tensor->mutable_values(), params[k].tensor->grad(), velocity_[k], settings_);
  }

 private:
  SgdSettings settings_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace bcd
