#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "hodgeflow/common.hpp"
#include "hodgeflow/metric.hpp"

namespace hodgeflow {

/// Phi(x) = sum_k a_k tanh(w_k^T x + b_k), with w_k the k-th row of W1.
struct PotentialNet {
  Mat W1;
  Vec b1;
  Vec a;

  static PotentialNet zeros(Index dim, Index width) {
    return {Mat::Zero(width, dim), Vec::Zero(width), Vec::Zero(width)};
  }

  Index dim() const { return W1.cols(); }
  Index width() const { return W1.rows(); }
  Index num_params() const { return W1.size() + b1.size() + a.size(); }

  double potential(const Vec& x) const { return a.dot((W1 * x + b1).array().tanh().matrix()); }

  /// Closed-form Euclidean gradient sum_k a_k sech^2(u_k) w_k.
  Vec grad_x(const Vec& x) const {
    const Vec t = (W1 * x + b1).array().tanh().matrix();
    const Vec s = (1.0 - t.array().square()).matrix();
    return W1.transpose() * a.cwiseProduct(s);
  }

  bool all_finite() const { return W1.allFinite() && b1.allFinite() && a.allFinite(); }

  double squared_norm() const { return W1.squaredNorm() + b1.squaredNorm() + a.squaredNorm(); }

  /// Parameters packed as [W1 row-major, b1, a].
  Vec to_flat() const {
    Vec out(num_params());
    Index o = 0;
    for (Index h = 0; h < width(); ++h) {
      for (Index j = 0; j < dim(); ++j) out[o++] = W1(h, j);
    }
    out.segment(o, width()) = b1;
    o += width();
    out.segment(o, width()) = a;
    return out;
  }

  static PotentialNet from_flat(const Vec& flat, Index dim, Index width) {
    require_dim(flat.size() == width * dim + 2 * width, "PotentialNet: flat parameter length mismatch");
    PotentialNet net = zeros(dim, width);
    Index o = 0;
    for (Index h = 0; h < width; ++h) {
      for (Index j = 0; j < dim; ++j) net.W1(h, j) = flat[o++];
    }
    net.b1 = flat.segment(o, width);
    o += width;
    net.a = flat.segment(o, width);
    return net;
  }

  PotentialNet& operator+=(const PotentialNet& o) {
    W1 += o.W1;
    b1 += o.b1;
    a += o.a;
    return *this;
  }
  PotentialNet& operator*=(double s) {
    W1 *= s;
    b1 *= s;
    a *= s;
    return *this;
  }
};

struct NeuralProjConfig {
  Index width = 64;
  double lr = 1e-3;
  int inner_steps = 2;
  double lambda_gauge = 1e-2;
  double lambda_wd = 1e-5;
  Index batch = 32;
  int epochs = 1;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    require(width >= 1 && lr > 0.0 && inner_steps >= 1 && batch >= 1 && epochs >= 1,
            "NeuralProjConfig: width, lr, inner_steps, batch and epochs must be positive");
    require(lambda_gauge >= 0.0 && lambda_wd >= 0.0, "NeuralProjConfig: regularizers must be nonnegative");
    require(momentum >= 0.0 && momentum < 1.0, "NeuralProjConfig: momentum must lie in [0,1)");
  }
};

/// g_theta(x) = M^{-1} grad_x Phi_theta(x).
inline Vec net_grad_x(const PotentialNet& net, const Metric& metric, const Vec& x) {
  require_dim(x.size() == net.dim() && metric.dim() == net.dim(), "net_grad_x: dimension mismatch");
  return metric.solve(net.grad_x(x));
}

/// Projection loss: mean ||F - g_theta||_M^2 + lambda_g (mean Phi)^2 + lambda_wd ||theta||^2.
inline double proj_loss(const PotentialNet& net, const Metric& metric, const PointMat& batch_x,
                        const PointMat& batch_F, const NeuralProjConfig& config) {
  require(batch_x.rows() >= 1, "proj_loss: empty batch");
  require_dim(batch_x.rows() == batch_F.rows() && batch_x.cols() == net.dim() && batch_F.cols() == net.dim(),
              "proj_loss: batch shape mismatch");
  const auto bsz = static_cast<double>(batch_x.rows());
  double resid = 0.0;
  double mean_phi = 0.0;
  for (Index k = 0; k < batch_x.rows(); ++k) {
    const Vec x = batch_x.row(k).transpose();
    const Vec r = batch_F.row(k).transpose() - net_grad_x(net, metric, x);
    resid += metric.norm_sq(r);
    mean_phi += net.potential(x);
  }
  resid /= bsz;
  mean_phi /= bsz;
  return resid + config.lambda_gauge * mean_phi * mean_phi + config.lambda_wd * net.squared_norm();
}

/// Exact gradient of proj_loss with respect to (W1, b1, a).
///
/// With u = w^T x + b, t = tanh u, s = 1 - t^2 and residual r = F - g, the
/// M-weighted residual term reduces to -2 r^T d(grad_x Phi)/dtheta because
/// g = M^{-1} grad_x Phi.
inline PotentialNet proj_loss_grad(const PotentialNet& net, const Metric& metric, const PointMat& batch_x,
                                   const PointMat& batch_F, const NeuralProjConfig& config) {
  require(batch_x.rows() >= 1, "proj_loss_grad: empty batch");
  require_dim(batch_x.rows() == batch_F.rows() && batch_x.cols() == net.dim() && batch_F.cols() == net.dim(),
              "proj_loss_grad: batch shape mismatch");
  const Index H = net.width();
  const auto bsz = static_cast<double>(batch_x.rows());
  PotentialNet g = PotentialNet::zeros(net.dim(), H);
  PotentialNet dphi_mean = PotentialNet::zeros(net.dim(), H);
  double mean_phi = 0.0;

  for (Index k = 0; k < batch_x.rows(); ++k) {
    const Vec x = batch_x.row(k).transpose();
    const Vec t = (net.W1 * x + net.b1).array().tanh().matrix();
    const Vec s = (1.0 - t.array().square()).matrix();
    const Vec grad_phi = net.W1.transpose() * net.a.cwiseProduct(s);
    const Vec r = batch_F.row(k).transpose() - metric.solve(grad_phi);
    const Vec c = net.W1 * r;  // c_h = r^T w_h
    mean_phi += net.a.dot(t);
    for (Index h = 0; h < H; ++h) {
      const double ds = -2.0 * s[h] * t[h];  // d sech^2 / du
      g.a[h] += -2.0 * s[h] * c[h] / bsz;
      g.b1[h] += -2.0 * net.a[h] * ds * c[h] / bsz;
      g.W1.row(h) += (-2.0 / bsz) * (net.a[h] * s[h] * r + net.a[h] * ds * c[h] * x).transpose();
      dphi_mean.a[h] += t[h] / bsz;
      dphi_mean.b1[h] += net.a[h] * s[h] / bsz;
      dphi_mean.W1.row(h) += (net.a[h] * s[h] / bsz) * x.transpose();
    }
  }
  mean_phi /= bsz;
  dphi_mean *= 2.0 * config.lambda_gauge * mean_phi;
  g += dphi_mean;
  PotentialNet wd = net;
  wd *= 2.0 * config.lambda_wd;
  g += wd;
  return g;
}

/// Fan-in uniform initialization: W1 ~ U(+-1/sqrt(d)), b1 = 0, a ~ U(+-1/sqrt(H)).
inline PotentialNet init_potential_net(Index dim, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double wb = 1.0 / std::sqrt(static_cast<double>(dim));
  const double ab = 1.0 / std::sqrt(static_cast<double>(width));
  std::uniform_real_distribution<double> uw(-wb, wb);
  std::uniform_real_distribution<double> ua(-ab, ab);
  PotentialNet net = PotentialNet::zeros(dim, width);
  for (Index h = 0; h < width; ++h) {
    for (Index j = 0; j < dim; ++j) net.W1(h, j) = uw(rng);
  }
  for (Index h = 0; h < width; ++h) net.a[h] = ua(rng);
  return net;
}

/// Momentum-SGD trainer that keeps its net and velocity across calls, so a
/// single potential can be refined at every refresh.
class PotentialTrainer {
 public:
  PotentialTrainer(Index dim, Metric metric, NeuralProjConfig config)
      : config_(config), metric_(std::move(metric)), rng_(config.seed) {
    config_.validate();
    require_dim(metric_.dim() == dim, "PotentialTrainer: metric dimension mismatch");
    net_ = init_potential_net(dim, config_.width, config_.seed);
    velocity_ = PotentialNet::zeros(dim, config_.width);
  }

  const PotentialNet& net() const { return net_; }
  const NeuralProjConfig& config() const { return config_; }
  const Metric& metric() const { return metric_; }
  /// Mini-batch loss observed before each SGD step.
  const std::vector<double>& history() const { return history_; }

  /// One SGD-with-momentum step on the given batch; returns the pre-step loss.
  double step(const PointMat& bx, const PointMat& bF) {
    const double loss = proj_loss(net_, metric_, bx, bF, config_);
    if (!std::isfinite(loss)) throw Error("train_potential: non-finite loss");
    PotentialNet grad = proj_loss_grad(net_, metric_, bx, bF, config_);
    velocity_ *= config_.momentum;
    grad *= -config_.lr;
    velocity_ += grad;
    net_ += velocity_;
    history_.push_back(loss);
    return loss;
  }

  /// `epochs` passes over shuffled mini-batches, K inner steps per batch.
  void fit(const PointMat& xs, const PointMat& Fs, int epochs) {
    require(xs.rows() >= 1, "train_potential: need at least one sample");
    require_dim(xs.rows() == Fs.rows() && xs.cols() == net_.dim() && Fs.cols() == net_.dim(),
                "train_potential: sample shape mismatch");
    const Index n = xs.rows();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    for (int ep = 0; ep < epochs; ++ep) {
      std::shuffle(order.begin(), order.end(), rng_);
      for (Index start = 0; start < n; start += config_.batch) {
        const Index len = std::min(config_.batch, n - start);
        PointMat bx(len, xs.cols());
        PointMat bF(len, Fs.cols());
        for (Index r = 0; r < len; ++r) {
          bx.row(r) = xs.row(order[static_cast<std::size_t>(start + r)]);
          bF.row(r) = Fs.row(order[static_cast<std::size_t>(start + r)]);
        }
        for (int kk = 0; kk < config_.inner_steps; ++kk) step(bx, bF);
      }
    }
  }

  /// One refresh of the amortized projection: sample a batch from the
  /// buffer and run K inner steps on it.
  void refresh(const PointMat& xs, const PointMat& Fs) {
    require(xs.rows() >= 1, "PotentialTrainer: empty buffer");
    const Index len = std::min(config_.batch, xs.rows());
    std::uniform_int_distribution<Index> pick(0, xs.rows() - 1);
    PointMat bx(len, xs.cols());
    PointMat bF(len, Fs.cols());
    for (Index r = 0; r < len; ++r) {
      const Index i = pick(rng_);
      bx.row(r) = xs.row(i);
      bF.row(r) = Fs.row(i);
    }
    for (int kk = 0; kk < config_.inner_steps; ++kk) step(bx, bF);
  }

 private:
  NeuralProjConfig config_;
  Metric metric_;
  std::mt19937_64 rng_;
  PotentialNet net_;
  PotentialNet velocity_;
  std::vector<double> history_;
};

struct TrainResult {
  PotentialNet net;
  double final_loss = 0.0;
  std::vector<double> history;
};

/// Fits Phi_theta to samples of F by minimizing the projection loss.
inline TrainResult train_potential(const PointMat& samples_x, const PointMat& samples_F, const Metric& metric,
                                   const NeuralProjConfig& config) {
  PotentialTrainer trainer(samples_x.cols(), metric, config);
  trainer.fit(samples_x, samples_F, config.epochs);
  const double final_loss = proj_loss(trainer.net(), metric, samples_x, samples_F, config);
  if (!std::isfinite(final_loss)) throw Error("train_potential: non-finite loss");
  return {trainer.net(), final_loss, trainer.history()};
}

}  // namespace hodgeflow
