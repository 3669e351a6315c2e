#pragma once

// Dense multilayer perceptrons with hand-written backpropagation, optional
// batch normalization, and an SGD-with-momentum optimizer.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cigit/error.hpp"
#include "cigit/linalg.hpp"
#include "cigit/random.hpp"

namespace cigit {

/// Layer shapes of an MLP. Every layer is Dense -> [BatchNorm] -> LeakyReLU,
/// except that the last activation can be switched off for heads that apply
/// their own output nonlinearity.
struct MLPSpec {
  std::vector<Index> layer_dims;  // input, hidden..., output
  double slope = 0.01;
  std::vector<bool> batchnorm;  // one per layer; empty means none
  bool activate_last = true;

  std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  Index input_dim() const { return layer_dims.front(); }
  Index output_dim() const { return layer_dims.back(); }
  bool has_batchnorm(std::size_t layer) const { return !batchnorm.empty() && batchnorm[layer]; }

  void validate() const {
    detail::require(layer_dims.size() >= 2, "an MLP needs at least an input and an output width");
    for (auto d : layer_dims) detail::require(d >= 1, "layer widths must be positive");
    detail::require(slope > 0.0 && slope < 1.0, "leaky slope must lie in (0, 1)");
    detail::require(batchnorm.empty() || batchnorm.size() == num_layers(),
                    "batchnorm flags must be given per layer");
  }

  bool operator==(const MLPSpec&) const = default;
};

struct DenseLayer {
  Matrix W;  // out x in
  Vector b;
  // Batch-norm affine parameters and running statistics (empty without BN).
  Vector gamma, beta, running_mean, running_var;
};

struct NetParams {
  MLPSpec spec;
  std::vector<DenseLayer> layers;

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.W.allFinite() || !l.b.allFinite() || !l.gamma.allFinite() || !l.beta.allFinite() ||
          !l.running_mean.allFinite() || !l.running_var.allFinite())
        return false;
    }
    return true;
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Xavier/Glorot-uniform weights, zero biases, identity batch norm.
inline NetParams init_params(const MLPSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetParams net{spec, {}};
  Rng rng = make_rng(seed, "xavier");
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Index in = spec.layer_dims[l], out = spec.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.W.resize(out, in);
    for (Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = u(rng);
    layer.b = Vector::Zero(out);
    if (spec.has_batchnorm(l)) {
      layer.gamma = Vector::Ones(out);
      layer.beta = Vector::Zero(out);
      layer.running_mean = Vector::Zero(out);
      layer.running_var = Vector::Ones(out);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

/// Same shapes as `init_params`, all entries zero (including BN scale).
inline NetParams zero_params(const MLPSpec& spec) {
  NetParams net = init_params(spec, 0);
  for (auto& l : net.layers) {
    l.W.setZero();
    l.b.setZero();
    l.gamma.setZero();
    l.beta.setZero();
  }
  return net;
}

enum class Mode { eval, train };

/// Intermediate values kept by a forward pass for backpropagation.
struct MLPCache {
  Mode mode = Mode::eval;
  std::vector<Matrix> inputs;   // input to each layer
  std::vector<Matrix> xhat;     // normalized pre-activation (BN layers)
  std::vector<Vector> inv_std;  // per-feature 1/sqrt(var+eps) (BN layers)
  std::vector<Vector> batch_mean, batch_var;
  std::vector<Matrix> pre_act;  // value fed to the activation
};

inline double leaky(double x, double s) { return x > 0.0 ? x : s * x; }

/// Forward pass. In train mode BN layers normalize with batch statistics; in
/// eval mode with running statistics.
inline Matrix forward(const NetParams& net, const Matrix& X, Mode mode = Mode::eval,
                      MLPCache* cache = nullptr) {
  const auto& spec = net.spec;
  if (X.cols() != spec.input_dim())
    throw InvalidArgument("input has " + std::to_string(X.cols()) + " columns, network expects " +
                          std::to_string(spec.input_dim()));
  if (cache) {
    *cache = MLPCache{};
    cache->mode = mode;
  }
  Matrix h = X;
  const std::size_t L = spec.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = net.layers[l];
    if (cache) cache->inputs.push_back(h);
    Matrix z = h * layer.W.transpose();
    z.rowwise() += layer.b.transpose();
    if (spec.has_batchnorm(l)) {
      Vector mean, var;
      if (mode == Mode::train) {
        mean = z.colwise().mean().transpose();
        var = (z.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
      } else {
        mean = layer.running_mean;
        var = layer.running_var;
      }
      Vector inv_std = (var.array() + kBatchNormEps).rsqrt();
      Matrix xhat = (z.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
      z = (xhat.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
          layer.beta.transpose().array();
      if (cache) {
        cache->xhat.push_back(std::move(xhat));
        cache->inv_std.push_back(std::move(inv_std));
        cache->batch_mean.push_back(std::move(mean));
        cache->batch_var.push_back(std::move(var));
      }
    } else if (cache) {
      cache->xhat.emplace_back();
      cache->inv_std.emplace_back();
      cache->batch_mean.emplace_back();
      cache->batch_var.emplace_back();
    }
    if (cache) cache->pre_act.push_back(z);
    if (l + 1 < L || spec.activate_last) z = z.unaryExpr([s = spec.slope](double v) { return leaky(v, s); });
    h = std::move(z);
  }
  return h;
}

/// Gradients matching the layout of NetParams.
struct NetGrads {
  std::vector<Matrix> dW;
  std::vector<Vector> db, dgamma, dbeta;

  static NetGrads zeros_like(const NetParams& net) {
    NetGrads g;
    for (const auto& l : net.layers) {
      g.dW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      g.db.push_back(Vector::Zero(l.b.size()));
      g.dgamma.push_back(Vector::Zero(l.gamma.size()));
      g.dbeta.push_back(Vector::Zero(l.beta.size()));
    }
    return g;
  }
};

/// Backpropagates dL/dY through the cached forward pass. Parameter gradients
/// are accumulated into `grads`; returns dL/dX.
inline Matrix backward(const NetParams& net, const MLPCache& cache, const Matrix& dY,
                       NetGrads& grads) {
  const auto& spec = net.spec;
  const std::size_t L = spec.num_layers();
  Matrix g = dY;
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = net.layers[l];
    const Matrix& pre = cache.pre_act[l];
    if (l + 1 < L || spec.activate_last)
      g = g.cwiseProduct(pre.unaryExpr([s = spec.slope](double v) { return v > 0.0 ? 1.0 : s; }));
    if (spec.has_batchnorm(l)) {
      const Matrix& xhat = cache.xhat[l];
      const Vector& inv_std = cache.inv_std[l];
      grads.dgamma[l] += g.cwiseProduct(xhat).colwise().sum().transpose();
      grads.dbeta[l] += g.colwise().sum().transpose();
      Matrix dxhat = g.array().rowwise() * layer.gamma.transpose().array();
      if (cache.mode == Mode::train) {
        const double N = static_cast<double>(g.rows());
        const RowVector sum_dxhat = dxhat.colwise().sum();
        const RowVector sum_dxhat_xhat = dxhat.cwiseProduct(xhat).colwise().sum();
        Matrix centered = (dxhat * N).rowwise() - sum_dxhat;
        centered -= (xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        g = (centered.array().rowwise() * (inv_std.transpose().array() / N)).matrix();
      } else {
        g = (dxhat.array().rowwise() * inv_std.transpose().array()).matrix();
      }
    }
    grads.dW[l] += g.transpose() * cache.inputs[l];
    grads.db[l] += g.colwise().sum().transpose();
    g = g * layer.W;
  }
  return g;
}

/// Folds the batch statistics of a train-mode pass into the running averages.
inline void update_running_stats(NetParams& net, const MLPCache& cache,
                                 double momentum = kBatchNormMomentum) {
  if (cache.mode != Mode::train) return;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (!net.spec.has_batchnorm(l)) continue;
    auto& layer = net.layers[l];
    const double n = static_cast<double>(cache.inputs[l].rows());
    const Vector unbiased = n > 1 ? Vector(cache.batch_var[l] * (n / (n - 1))) : cache.batch_var[l];
    layer.running_mean = (1 - momentum) * layer.running_mean + momentum * cache.batch_mean[l];
    layer.running_var = (1 - momentum) * layer.running_var + momentum * unbiased;
  }
}

/// Flat views over trainable parameters, in a fixed order.
inline std::vector<std::span<double>> parameter_views(NetParams& net) {
  std::vector<std::span<double>> v;
  for (auto& l : net.layers) {
    v.emplace_back(l.W.data(), static_cast<std::size_t>(l.W.size()));
    v.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
    if (l.gamma.size() > 0) {
      v.emplace_back(l.gamma.data(), static_cast<std::size_t>(l.gamma.size()));
      v.emplace_back(l.beta.data(), static_cast<std::size_t>(l.beta.size()));
    }
  }
  return v;
}

/// Views over `grads` in the same order as `parameter_views`.
inline std::vector<std::span<double>> gradient_views(NetGrads& g) {
  std::vector<std::span<double>> v;
  for (std::size_t l = 0; l < g.dW.size(); ++l) {
    v.emplace_back(g.dW[l].data(), static_cast<std::size_t>(g.dW[l].size()));
    v.emplace_back(g.db[l].data(), static_cast<std::size_t>(g.db[l].size()));
    if (g.dgamma[l].size() > 0) {
      v.emplace_back(g.dgamma[l].data(), static_cast<std::size_t>(g.dgamma[l].size()));
      v.emplace_back(g.dbeta[l].data(), static_cast<std::size_t>(g.dbeta[l].size()));
    }
  }
  return v;
}

/// Stochastic gradient descent with classical momentum.
class SgdMomentum {
 public:
  explicit SgdMomentum(double lr = 1e-3, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}

  void step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads) {
    if (params.size() != grads.size()) throw InvalidArgument("parameter/gradient count mismatch");
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.emplace_back(p.size(), 0.0);
    }
    if (velocity_.size() != params.size()) throw InvalidArgument("optimizer reused across shapes");
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& vel = velocity_[t];
      if (vel.size() != params[t].size() || grads[t].size() != params[t].size())
        throw InvalidArgument("optimizer tensor shape mismatch");
      for (std::size_t i = 0; i < vel.size(); ++i) {
        vel[i] = momentum_ * vel[i] - lr_ * grads[t][i];
        params[t][i] += vel[i];
      }
    }
  }

  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

/// Rounds every parameter and statistic through single precision.
inline void round_to_float(NetParams& net) {
  for (auto& l : net.layers) {
    round_to_float(l.W);
    round_to_float(l.b);
    round_to_float(l.gamma);
    round_to_float(l.beta);
    round_to_float(l.running_mean);
    round_to_float(l.running_var);
  }
}

}  // namespace cigit
