#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/dynamics.hpp"
#include "test_support.hpp"

using namespace hodgeflow;
namespace ht = hodgeflow::testing;

namespace {

Mat random_spd(Index d, std::mt19937_64& rng, double floor = 0.2) {
  const Mat a = Mat::NullaryExpr(d, d, [&] { return std::normal_distribution<double>(0, 1)(rng); });
  return a * a.transpose() / static_cast<double>(d) + floor * Mat::Identity(d, d);
}

/// Brute force over active sets: for every support S, the KKT candidate is
/// y_S - tau with tau = (sum y_S - 1)/|S|; keep the closest feasible one.
Vec simplex_projection_oracle(const Vec& y) {
  const Index n = y.size();
  Vec best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    double sum = 0.0;
    int count = 0;
    for (Index i = 0; i < n; ++i) {
      if ((mask >> i) & 1U) {
        sum += y[i];
        ++count;
      }
    }
    const double tau = (sum - 1.0) / count;
    Vec x = Vec::Zero(n);
    bool ok = true;
    for (Index i = 0; i < n; ++i) {
      if ((mask >> i) & 1U) {
        x[i] = y[i] - tau;
        ok = ok && x[i] >= -1e-15;
      }
    }
    if (ok && (x - y).norm() < best_d) {
      best_d = (x - y).norm();
      best = x;
    }
  }
  return best;
}

Eigen::Matrix3d rot_xy() {
  Eigen::Matrix3d S;
  S << 0, 1, 0, -1, 0, 0, 0, 0, 0;
  return S;
}

Vec rps_start() { return (Vec(6) << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6).finished(); }

}  // namespace

TEST(Retract, FeasiblePointsAreFixed) {
  const Vec y = (Vec(3) << 0.2, 0.3, 0.5).finished();
  EXPECT_EQ(retract(DomainSpec::simplex_product({3}), y), y);
  EXPECT_EQ(retract(DomainSpec::box(3, -1, 1), y), y);
  EXPECT_EQ(retract(DomainSpec::unconstrained(3), y), y);
}

TEST(Retract, BoxClamp) {
  EXPECT_EQ(retract(DomainSpec::box(2, -1, 1), (Vec(2) << 2, 0.5).finished()), (Vec(2) << 1, 0.5).finished());
}

TEST(Retract, SimplexExample) {
  const Vec p = retract(DomainSpec::simplex_product({3}), (Vec(3) << 1, 1, 0).finished());
  EXPECT_LT((p - (Vec(3) << 0.5, 0.5, 0).finished()).norm(), 1e-15);
}

TEST(Retract, SimplexMatchesActiveSetOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 300; ++t) {
    const Index n = 2 + t % 6;
    const Vec y = ht::normal_vec(n, rng, 1.5);
    EXPECT_LT((project_simplex(y) - simplex_projection_oracle(y)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Retract, ProjectionVariationalInequality) {
  std::mt19937_64 rng(2);
  const auto dom = DomainSpec::simplex_product({3, 4});
  for (int t = 0; t < 100; ++t) {
    const Vec y = ht::normal_vec(7, rng, 2.0);
    const Vec p = retract(dom, y);
    EXPECT_TRUE(dom.contains(p));
    for (int s = 0; s < 20; ++s) {
      const Vec z = sample_domain(dom, rng, Vec::Zero(7), 1.0);
      EXPECT_LE((y - p).dot(z - p), 1e-12);
    }
  }
}

TEST(Retract, CenteredBlocksRemoveBlockMeans) {
  const auto dom = DomainSpec::centered_blocks({2, 3});
  const Vec p = retract(dom, (Vec(5) << 1, 3, 1, 2, 6).finished());
  EXPECT_LT((p - (Vec(5) << -1, 1, -2, -1, 3).finished()).norm(), 1e-15);
  EXPECT_TRUE(dom.contains(p));
}

TEST(Domain, TangentBallSamplesAreFeasibleAndIsotropic) {
  std::mt19937_64 rng(3);
  const auto dom = DomainSpec::simplex_product({3, 3});
  const Vec c = domain_center(dom);
  const double r = domain_inradius(dom);
  EXPECT_NEAR(r, 1.0 / std::sqrt(6.0), 1e-15);
  Vec mean = Vec::Zero(6);
  for (int t = 0; t < 4000; ++t) {
    const Vec x = sample_tangent_ball(dom, rng, c, r);
    EXPECT_TRUE(dom.contains(x, 1e-12));
    EXPECT_LE((x - c).norm(), r * (1 + 1e-12));
    mean += x / 4000.0;
  }
  EXPECT_LT((mean - c).norm(), 0.01);
}

TEST(Domain, Diameters) {
  EXPECT_NEAR(DomainSpec::box(2, -1, 1).diameter(), std::sqrt(8.0), 1e-15);
  EXPECT_NEAR(DomainSpec::simplex_product({3, 3}).diameter(), 2.0, 1e-15);
  EXPECT_TRUE(std::isinf(DomainSpec::unconstrained(2).diameter()));
}

TEST(RunDynamics, ExactAscentContractsGeometrically) {
  const auto spec = FieldSpec::quadratic_potential(Mat::Identity(2, 2), Vec::Zero(2));
  RunConfig rc;
  rc.mode = DynamicsMode::ExactPotentialAscent;
  rc.eta = 0.5;
  rc.steps = 40;
  const Vec x0 = (Vec(2) << 1, 1).finished();
  const auto traj = run_dynamics(spec, DomainSpec::unconstrained(2), x0, rc);
  for (int t = 0; t <= rc.steps; ++t) {
    EXPECT_EQ(traj.iterates.row(t).transpose(), std::pow(0.5, t) * x0) << t;
  }
  for (int t = 0; t + 1 < rc.steps; ++t) {
    if (traj.iterates.row(t).norm() <= 1e-8) break;
    EXPECT_GT(traj.steps[t + 1].phi, traj.steps[t].phi);
  }
}

TEST(RunDynamics, EulerOnPureSkewGrowsByExactFactor) {
  const auto spec = FieldSpec::bilinear_skew_2d(1.0, 0.0);
  for (double eta : {0.01, 0.1, 0.5}) {
    RunConfig rc;
    rc.eta = eta;
    rc.steps = 200;
    const auto traj = run_dynamics(spec, DomainSpec::unconstrained(2), (Vec(2) << 0.3, -0.4).finished(), rc);
    for (int t = 0; t < rc.steps; ++t) {
      const double ratio = traj.iterates.row(t + 1).squaredNorm() / traj.iterates.row(t).squaredNorm();
      EXPECT_NEAR(ratio, 1.0 + eta * eta, 1e-12);
    }
  }
}

TEST(RunDynamics, Rk4ConservesSkewNorm) {
  const auto spec = FieldSpec::bilinear_skew_2d(1.0, 0.0);
  const FieldFn f = [&](const Vec& z) { return eval_field(spec, z); };
  const PointMat states = rk4_integrate(f, (Vec(2) << 1, 0).finished(), 1e-3, 10000);
  for (Index s = 0; s < states.rows(); ++s) EXPECT_NEAR(states.row(s).squaredNorm(), 1.0, 1e-8);
}

TEST(RunDynamics, LipschitzConstantMatchesEigenvalues) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const Mat Q = random_spd(2 + t % 9, rng);
    const double oracle = Eigen::SelfAdjointEigenSolver<Mat>(Q).eigenvalues().maxCoeff();
    EXPECT_NEAR(lipschitz_constant(Q), oracle, 1e-12 * oracle);
  }
}

TEST(RunDynamics, LyapunovImprovementOnBoxes) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d = 1 + trial;
    const Mat Q = random_spd(d, rng);
    const Vec c = ht::normal_vec(d, rng, 1.5);
    const auto spec = FieldSpec::quadratic_potential(Q, c);
    const auto box = DomainSpec::box(d, -1, 1);
    RunConfig rc;
    rc.mode = DynamicsMode::ExactPotentialAscent;
    rc.eta = 1.0 / Eigen::SelfAdjointEigenSolver<Mat>(Q).eigenvalues().maxCoeff();
    rc.steps = 300;
    const Vec x0 = sample_domain(box, rng, Vec::Zero(d), 1.0);
    const auto traj = run_dynamics(spec, box, x0, rc);
    const auto& pot = *spec.as<field::QuadraticPotential>();
    for (int t = 0; t < rc.steps; ++t) {
      const Vec x = traj.iterates.row(t).transpose();
      const Vec y = traj.iterates.row(t + 1).transpose();
      EXPECT_TRUE(box.contains(y));
      EXPECT_GE(pot.value(y) - pot.value(x), (y - x).squaredNorm() / (2 * rc.eta) - 1e-10) << "trial " << trial;
    }
    // Phi range: max by a long projected ascent, min over the vertices
    Vec xm = Vec::Zero(d);
    for (int it = 0; it < 20000; ++it) xm = retract(box, xm + rc.eta * pot.gradient(xm));
    double phi_min = std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
      Vec v(d);
      for (Index i = 0; i < d; ++i) v[i] = (mask >> i) & 1U ? 1.0 : -1.0;
      phi_min = std::min(phi_min, pot.value(v));
    }
    double energy = 0.0;
    for (int t = 0; t < rc.steps; ++t) {
      const Vec x = traj.iterates.row(t).transpose();
      energy += gradient_mapping(pot.gradient(x), x, rc.eta, box).squaredNorm();
    }
    EXPECT_LE(energy, (2.0 / rc.eta) * (pot.value(xm) - phi_min) * (1 + 1e-9));
  }
}

TEST(RunDynamics, InvSqrtSchedule) {
  RunConfig rc;
  rc.schedule = EtaSchedule::InvSqrt;
  rc.eta = 0.4;
  EXPECT_DOUBLE_EQ(rc.eta_at(0), 0.4);
  EXPECT_DOUBLE_EQ(rc.eta_at(3), 0.2);
}

TEST(RunDynamics, PreconditionErrors) {
  const auto rps = FieldSpec::rps();
  const auto dom = DomainSpec::simplex_product({3, 3});
  RunConfig rc;
  EXPECT_THROW(run_dynamics(rps, dom, Vec::Constant(6, 0.5), rc), Error);
  rc.mode = DynamicsMode::HPMLGraph;
  rc.buffer_size = 8;
  EXPECT_THROW(run_dynamics(rps, dom, rps_start(), rc), Error);
  rc.mode = DynamicsMode::ExactPotentialAscent;
  EXPECT_THROW(run_dynamics(rps, dom, rps_start(), rc), Error);
  rc.mode = DynamicsMode::Raw;
  rc.steps = 0;
  EXPECT_THROW(run_dynamics(rps, dom, rps_start(), rc), Error);
}

TEST(RunDynamics, IteratesStayFeasibleInEveryMode) {
  const auto rps = FieldSpec::rps();
  const auto dom = DomainSpec::simplex_product({3, 3});
  for (auto mode : {DynamicsMode::Raw, DynamicsMode::HPMLGraph, DynamicsMode::HPMLNeural}) {
    for (auto source : {SampleSource::Domain, SampleSource::Jitter, SampleSource::Ball}) {
      RunConfig rc;
      rc.mode = mode;
      rc.steps = 60;
      rc.buffer_size = 120;
      rc.eta = 0.2;
      ProjParams pp;
      pp.sampling = source;
      const auto traj = run_dynamics(rps, dom, rps_start(), rc, pp);
      for (Index t = 0; t < traj.iterates.rows(); ++t) {
        EXPECT_TRUE(dom.contains(traj.iterates.row(t).transpose(), 1e-9));
      }
      if (mode != DynamicsMode::Raw) {
        EXPECT_EQ(traj.refresh_steps.size(), 8u);
      }
    }
  }
}

TEST(RunDynamics, SameSeedSameTrajectory) {
  const auto spec = FieldSpec::linear_3d(0.5, rot_xy());
  RunConfig rc;
  rc.mode = DynamicsMode::HPMLGraph;
  rc.steps = 50;
  rc.seed = 7;
  const Vec x0 = (Vec(3) << 1, -1, 0.5).finished();
  const auto a = run_dynamics(spec, DomainSpec::unconstrained(3), x0, rc);
  const auto b = run_dynamics(spec, DomainSpec::unconstrained(3), x0, rc);
  EXPECT_EQ(a.iterates, b.iterates);
}

TEST(OrbitMetrics, ConstantTrajectory) {
  const PointMat traj = PointMat::Ones(10, 2);
  EXPECT_EQ(orbit_diameter(traj, 5), 0.0);
  EXPECT_EQ(path_length(traj), 0.0);
}

TEST(OrbitMetrics, UnitSquareLoop) {
  PointMat traj(5, 2);
  traj << 0, 0, 1, 0, 1, 1, 0, 1, 0, 0;
  EXPECT_DOUBLE_EQ(path_length(traj), 4.0);
  EXPECT_DOUBLE_EQ(orbit_diameter(traj, 5), std::sqrt(2.0));
  EXPECT_THROW(orbit_diameter(traj, 6), Error);
}

TEST(Mechanism, RpsProjectionSuppressesCirculation) {
  const auto rps = FieldSpec::rps();
  const auto dom = DomainSpec::simplex_product({3, 3});
  RunConfig rc;
  rc.steps = 2000;
  const auto raw = run_dynamics(rps, dom, rps_start(), rc);
  rc.mode = DynamicsMode::HPMLGraph;
  ProjParams pp;
  pp.k = 32;
  pp.sampling = SampleSource::Ball;
  double nonpot = 0.0;
  int refreshes = 0;
  const auto hpml = run_dynamics(rps, dom, rps_start(), rc, pp, [&](const RefreshView& v) {
    nonpot += v.result.nonpot;
    ++refreshes;
  });
  EXPECT_LT(orbit_diameter(hpml, 200), orbit_diameter(raw, 200));
  EXPECT_GE(nonpot / refreshes, 0.9);
}

TEST(Mechanism, Linear3DLiftedDirectionsFollowPotential) {
  const auto spec = FieldSpec::linear_3d(0.5, rot_xy());
  RunConfig rc;
  rc.mode = DynamicsMode::HPMLGraph;
  rc.steps = 200;
  ProjParams pp;
  pp.sampling = SampleSource::Ball;
  double total = 0.0;
  int count = 0;
  run_dynamics(spec, DomainSpec::unconstrained(3), (Vec(3) << 1.5, -1, 0.8).finished(), rc, pp,
               [&](const RefreshView& v) {
                 const PointMat dirs = lift_all_nodes(v.graph, v.result.phi, Metric::identity(3));
                 for (Index i = 0; i < dirs.rows(); ++i) {
                   const Vec x = v.graph.position(i);
                   const Vec g = dirs.row(i).transpose();
                   total += g.dot(-x) / (g.norm() * x.norm());
                   ++count;
                 }
               });
  EXPECT_GE(total / count, 0.9);
}

TEST(Mechanism, NeuralModeLearnsContraction) {
  const auto spec = FieldSpec::linear_3d(0.5, rot_xy());
  RunConfig rc;
  rc.mode = DynamicsMode::HPMLNeural;
  rc.steps = 400;
  ProjParams pp;
  pp.sampling = SampleSource::Ball;
  pp.neural.width = 32;
  pp.neural.lr = 1e-2;
  pp.neural_warmup_epochs = 30;
  const Vec x0 = (Vec(3) << 1.5, -1, 0.8).finished();
  const auto traj = run_dynamics(spec, DomainSpec::unconstrained(3), x0, rc, pp);
  EXPECT_LT(traj.iterates.row(rc.steps).norm(), 0.25 * x0.norm());
  EXPECT_TRUE(traj.iterates.allFinite());
}
