#pragma once

#include <cmath>
#include <vector>

#include "hodgeflow/common.hpp"
#include "hodgeflow/domain.hpp"
#include "hodgeflow/dynamics.hpp"

namespace hodgeflow {

/// Two-agent matrix game; agent 1 picks rows, agent 2 picks columns.
struct MatrixGame {
  Mat A;
  Mat B;

  MatrixGame(Mat a, Mat b) : A(std::move(a)), B(std::move(b)) {
    require_dim(A.rows() == B.rows() && A.cols() == B.cols() && A.size() > 0, "MatrixGame: payoff shapes differ");
    require(A.allFinite() && B.allFinite(), "MatrixGame: payoffs must be finite");
  }

  Index m() const { return A.rows(); }
  Index n() const { return A.cols(); }
  bool identical_interest() const { return A == B; }

  static MatrixGame coordination(Index size = 2) {
    return {Mat::Identity(size, size), Mat::Identity(size, size)};
  }
  static MatrixGame matching_pennies() {
    Mat a(2, 2);
    a << 1, -1, -1, 1;
    return {a, -a};
  }
};

inline Vec softmax(const Vec& z) {
  const Vec e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

struct LogitPolicyPair {
  Vec theta1;
  Vec theta2;

  Vec p() const { return softmax(theta1); }
  Vec q() const { return softmax(theta2); }
  Vec stacked() const {
    Vec out(theta1.size() + theta2.size());
    out << theta1, theta2;
    return out;
  }
  static LogitPolicyPair split(const Vec& theta, Index m) {
    return {theta.head(m), theta.tail(theta.size() - m)};
  }
};

/// Exact stacked expected-payoff gradient
/// (Jsm(theta1)^T A q, Jsm(theta2)^T B^T p) with Jsm = diag(p) - p p^T.
inline Vec stacked_field(const MatrixGame& game, const LogitPolicyPair& pol) {
  require_dim(pol.theta1.size() == game.m() && pol.theta2.size() == game.n(), "stacked_field: logit sizes mismatch");
  require(pol.theta1.allFinite() && pol.theta2.allFinite(), "stacked_field: non-finite logits");
  const Vec p = pol.p();
  const Vec q = pol.q();
  const Vec u1 = game.A * q;
  const Vec u2 = game.B.transpose() * p;
  Vec out(game.m() + game.n());
  out.head(game.m()) = p.cwiseProduct(u1) - p * p.dot(u1);
  out.tail(game.n()) = q.cwiseProduct(u2) - q * q.dot(u2);
  return out;
}

inline std::pair<double, double> expected_payoffs(const MatrixGame& game, const LogitPolicyPair& pol) {
  const Vec p = pol.p();
  const Vec q = pol.q();
  return {p.dot(game.A * q), p.dot(game.B * q)};
}

inline FieldFn stacked_field_fn(const MatrixGame& game) {
  return [game](const Vec& theta) { return stacked_field(game, LogitPolicyPair::split(theta, game.m())); };
}

/// Numeric line integral of a field around the parallelogram
/// x0 -> x0 + eps u -> x0 + eps (u + v) -> x0 + eps v -> x0 (Gauss-Legendre, 5 nodes per side).
inline double parallelogram_circulation(const FieldFn& field, const Vec& x0, const Vec& u, const Vec& v, double eps) {
  static constexpr double nodes[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                      0.9061798459386640};
  static constexpr double weights[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                        0.4786286704993665, 0.2369268850561891};
  const Vec corners[5] = {x0, x0 + eps * u, x0 + eps * (u + v), x0 + eps * v, x0};
  double total = 0.0;
  for (int side = 0; side < 4; ++side) {
    const Vec& a = corners[side];
    const Vec& b = corners[side + 1];
    const Vec seg = b - a;
    for (int q = 0; q < 5; ++q) {
      const double s = 0.5 * (nodes[q] + 1.0);
      total += 0.5 * weights[q] * field(a + s * seg).dot(seg);
    }
  }
  return total;
}

struct CtdeMetrics {
  std::vector<double> payoff1;
  std::vector<double> payoff2;
  /// (step, NonPot) at each graph refresh.
  std::vector<std::pair<int, double>> nonpot;
};

struct CtdeRun {
  Trajectory trajectory;
  CtdeMetrics metrics;
};

/// Simultaneous logit ascent on the stacked field (Raw) or on its projection
/// (HPML modes), over per-block mean-centered logits.
inline CtdeRun ctde_train(const MatrixGame& game, const LogitPolicyPair& policies0, const RunConfig& config,
                          const ProjParams& params = {}) {
  require(config.mode != DynamicsMode::ExactPotentialAscent, "ctde_train: no closed-form potential for logit games");
  const auto domain = DomainSpec::centered_blocks({game.m(), game.n()});
  const Vec x0 = retract(domain, policies0.stacked());
  CtdeRun run;
  run.trajectory = run_dynamics(stacked_field_fn(game), domain, x0, config, params);
  for (Index t = 0; t < run.trajectory.iterates.rows(); ++t) {
    const auto pol = LogitPolicyPair::split(run.trajectory.iterates.row(t).transpose(), game.m());
    const auto [j1, j2] = expected_payoffs(game, pol);
    run.metrics.payoff1.push_back(j1);
    run.metrics.payoff2.push_back(j2);
  }
  for (std::size_t s = 0; s < run.trajectory.steps.size(); ++s) {
    const double np = run.trajectory.steps[s].nonpot;
    if (!std::isnan(np)) run.metrics.nonpot.emplace_back(static_cast<int>(s), np);
  }
  return run;
}

}  // namespace hodgeflow
