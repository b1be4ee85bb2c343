#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hodgeflow/diagnostics.hpp"
#include "test_support.hpp"

using namespace hodgeflow;
namespace ht = hodgeflow::testing;

namespace {

Mat skew2() { return (Mat(2, 2) << 0, 1, -1, 0).finished(); }

FieldSpec plus_skew(double rho) {
  Mat Q(2, 2);
  Q << 2.0, 0.4, 0.4, 1.0;
  return FieldSpec::potential_plus_skew(Q, (Vec(2) << 0.5, -0.3).finished(), skew2(), rho);
}

/// Gap by brute-force maximization over all vertices of a box.
double box_gap_oracle(const Vec& F, const Vec& xbar, const DomainSpec& box) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << box.dim); ++mask) {
    Vec v(box.dim);
    for (Index i = 0; i < box.dim; ++i) v[i] = (mask >> i) & 1U ? box.hi[i] : box.lo[i];
    best = std::max(best, F.dot(xbar - v));
  }
  return best;
}

}  // namespace

TEST(StampacchiaGap, ZeroOperator) {
  EXPECT_EQ(stampacchia_gap(Vec::Zero(3), Vec::Constant(3, 1.0 / 3), DomainSpec::simplex_product({3})), 0.0);
}

TEST(StampacchiaGap, SimplexCorner) {
  const double gap = stampacchia_gap((Vec(3) << 1, 0, 0).finished(), Vec::Constant(3, 1.0 / 3),
                                     DomainSpec::simplex_product({3}));
  EXPECT_NEAR(gap, 1.0 / 3.0, 1e-15);
}

TEST(StampacchiaGap, RpsEquilibrium) {
  const Vec x = Vec::Constant(6, 1.0 / 3);
  EXPECT_LE(stampacchia_gap(-eval_field(FieldSpec::rps(), x), x, DomainSpec::simplex_product({3, 3})), 1e-9);
}

TEST(StampacchiaGap, UnboundedDomainRejected) {
  EXPECT_THROW(stampacchia_gap(Vec::Ones(2), Vec::Zero(2), DomainSpec::unconstrained(2)), Error);
}

TEST(StampacchiaGap, MatchesVertexEnumerationAndIsNonnegative) {
  std::mt19937_64 rng(1);
  const auto box = DomainSpec::box((Vec(3) << -1, 0, -2).finished(), (Vec(3) << 1, 3, -1).finished());
  const auto simplex = DomainSpec::simplex_product({3, 2});
  for (int t = 0; t < 200; ++t) {
    const Vec F = ht::normal_vec(3, rng);
    const Vec x = sample_domain(box, rng, Vec::Zero(3), 1.0);
    const double g = stampacchia_gap(F, x, box);
    EXPECT_NEAR(g, box_gap_oracle(F, x, box), 1e-12);
    EXPECT_GE(g, -1e-12);
    const Vec xs = sample_domain(simplex, rng, Vec::Zero(5), 1.0);
    EXPECT_GE(stampacchia_gap(ht::normal_vec(5, rng), xs, simplex), -1e-12);
  }
}

TEST(StampacchiaGap, ZeroGapSolvesTheVariationalInequality) {
  std::mt19937_64 rng(2);
  const auto box = DomainSpec::box(2, -1, 1);
  const auto spec = plus_skew(0.3);
  // the projected iteration x <- P(x - tau F(x)) converges for this strongly monotone operator
  Vec x = Vec::Zero(2);
  for (int it = 0; it < 5000; ++it) x = retract(box, x + 0.1 * eval_field(spec, x));
  const Vec F = -eval_field(spec, x);
  ASSERT_LE(stampacchia_gap(F, x, box), 1e-10);
  for (int t = 0; t < 100; ++t) {
    const Vec z = sample_domain(box, rng, Vec::Zero(2), 1.0);
    EXPECT_GE(F.dot(z - x), -1e-8);
  }
}

TEST(GapPhi, Examples) {
  const auto box = DomainSpec::box(2, -1, 1);
  EXPECT_EQ(gap_phi(Vec::Zero(2), Vec::Zero(2), box), 0.0);
  EXPECT_DOUBLE_EQ(gap_phi((Vec(2) << 2, -1).finished(), Vec::Zero(2), box), 3.0);
}

TEST(GapPhi, VanishesAtBoxMaximizer) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const Index d = 2 + t % 5;
    const Mat a = Mat::NullaryExpr(d, d, [&] { return std::normal_distribution<double>(0, 1)(rng); });
    const field::QuadraticPotential pot{a * a.transpose() + 0.3 * Mat::Identity(d, d), ht::normal_vec(d, rng, 2.0)};
    const auto box = DomainSpec::box(d, -1, 1);
    const Vec xs = maximize_on_box(pot, box);
    EXPECT_LE(gap_phi(pot.gradient(xs), xs, box), 1e-8);
  }
}

TEST(GapLemmas, ResidualSplitHoldsPointwise) {
  std::mt19937_64 rng(4);
  const auto box = DomainSpec::box(2, -1, 1);
  for (double rho : {0.0, 0.25, 0.5, 2.0}) {
    const auto spec = plus_skew(rho);
    const auto& f = *spec.as<field::PotentialPlusSkew>();
    for (int t = 0; t < 200; ++t) {
      const Vec x = sample_domain(box, rng, Vec::Zero(2), 1.0);
      const double gap = stampacchia_gap(-eval_field(spec, x), x, box);
      const double R = (rho * (f.S * x)).norm();
      EXPECT_LE(gap, gap_phi(f.base.gradient(x), x, box) + box.diameter() * R + 1e-9);
    }
  }
}

TEST(GapLemmas, MappingBoundAlongExactAscent) {
  const auto box = DomainSpec::box(2, -1, 1);
  const auto spec = plus_skew(0.5);
  const auto params = theory_params_for(spec, box, 1.0 / lipschitz_constant(spec.reference_potential()->Q), 200);
  RunConfig rc;
  rc.mode = DynamicsMode::ExactPotentialAscent;
  rc.eta = params.eta;
  rc.steps = 200;
  const auto traj = run_dynamics(spec, box, (Vec(2) << -0.9, 0.8).finished(), rc);
  const auto pot = *spec.reference_potential();
  for (int t = 0; t < rc.steps; ++t) {
    const Vec x = traj.iterates.row(t).transpose();
    const double mapping = gradient_mapping(pot.gradient(x), x, rc.eta, box).norm();
    EXPECT_LE(gap_phi(pot.gradient(x), x, box), (params.D + rc.eta * params.G) * mapping + 1e-9);
  }
}

TEST(TheoryParams, PotentialPlusSkewOnUnitBox) {
  const auto box = DomainSpec::box(2, -1, 1);
  const double eta = 0.1;
  const auto p = theory_params_for(plus_skew(0.5), box, eta, 10);
  EXPECT_NEAR(p.D, std::sqrt(8.0), 1e-15);
  EXPECT_NEAR(p.eps_residual, 0.5 * std::sqrt(2.0), 1e-15);
  Mat Q(2, 2);
  Q << 2.0, 0.4, 0.4, 1.0;
  EXPECT_NEAR(p.L, Eigen::SelfAdjointEigenSolver<Mat>(Q).eigenvalues().maxCoeff(), 1e-12);
  // G by dense sampling never exceeds the vertex maximum
  const auto pot = *plus_skew(0.5).reference_potential();
  double g = 0.0;
  for (int i = 0; i <= 100; ++i) {
    for (int j = 0; j <= 100; ++j) {
      g = std::max(g, pot.gradient((Vec(2) << -1 + 0.02 * i, -1 + 0.02 * j).finished()).norm());
    }
  }
  EXPECT_NEAR(p.G, g, 1e-12);
  EXPECT_GE(p.phi_max, p.phi_min);
  EXPECT_THROW(theory_params_for(FieldSpec::bilinear_skew_2d(1.0), box, eta, 10), Error);
}

TEST(GapBound, ExactAscentSweep) {
  const auto box = DomainSpec::box(2, -1, 1);
  for (double rho : {0.0, 0.25, 0.5}) {
    const auto spec = plus_skew(rho);
    const double eta = 1.0 / lipschitz_constant(spec.reference_potential()->Q);
    for (int T : {10, 100, 1000}) {
      const auto params = theory_params_for(spec, box, eta, T);
      RunConfig rc;
      rc.mode = DynamicsMode::ExactPotentialAscent;
      rc.eta = eta;
      rc.steps = T;
      const auto traj = run_dynamics(spec, box, (Vec(2) << -1, 1).finished(), rc);
      const auto rep = check_gap_bound(traj, params, spec, box);
      EXPECT_TRUE(rep.holds) << "rho " << rho << " T " << T << " lhs " << rep.lhs << " rhs " << rep.rhs;
      EXPECT_GE(rep.lhs, -1e-12);
      EXPECT_FALSE(rep.inexact);
      if (rho == 0.0 && T == 1000) {
        EXPECT_LE(rep.lhs, 1e-8);
      }
    }
  }
}

TEST(GapBound, InexactDirectionsSweep) {
  const auto box = DomainSpec::box(2, -1, 1);
  for (double rho : {0.0, 0.25, 0.5}) {
    const auto spec = plus_skew(rho);
    const double eta = 1.0 / lipschitz_constant(spec.reference_potential()->Q);
    for (int T : {10, 100, 1000}) {
      const auto params = theory_params_for(spec, box, eta, T, 0.05);
      RunConfig rc;
      rc.mode = DynamicsMode::ExactPotentialAscent;
      rc.eta = eta;
      rc.steps = T;
      rc.seed = static_cast<std::uint64_t>(T);
      ProjParams pp;
      pp.direction_noise = 0.05;
      const auto traj = run_dynamics(spec, box, (Vec(2) << -1, 1).finished(), rc, pp);
      // injected error really is bounded by delta_bar
      const auto pot = *spec.reference_potential();
      for (int t = 0; t < T; ++t) {
        const Vec x = traj.iterates.row(t).transpose();
        EXPECT_LE((traj.directions.row(t).transpose() - pot.gradient(x)).norm(), 0.05 + 1e-15);
      }
      const auto rep = check_gap_bound(traj, params, spec, box);
      EXPECT_TRUE(rep.inexact);
      EXPECT_TRUE(rep.holds) << "rho " << rho << " T " << T << " lhs " << rep.lhs << " rhs " << rep.rhs;
    }
  }
}

TEST(GapBound, RejectsMismatchedInputs) {
  const auto box = DomainSpec::box(2, -1, 1);
  const auto spec = plus_skew(0.25);
  RunConfig rc;
  rc.mode = DynamicsMode::ExactPotentialAscent;
  rc.eta = 0.1;
  rc.steps = 10;
  const auto traj = run_dynamics(spec, box, Vec::Zero(2), rc);
  EXPECT_THROW(check_gap_bound(traj, theory_params_for(spec, box, 0.1, 11), spec, box), Error);
  EXPECT_THROW(check_gap_bound(traj, theory_params_for(spec, box, 0.1, 10), FieldSpec::bilinear_skew_2d(1.0), box),
               Error);
  TheoryBoundParams bad;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(LyapunovHelpers, ExactAscentHasNoViolation) {
  const auto box = DomainSpec::box(3, -1, 1);
  Mat Q = Mat::Identity(3, 3);
  Q(0, 0) = 3.0;
  const auto spec = FieldSpec::quadratic_potential(Q, (Vec(3) << 2, -2, 0.3).finished());
  RunConfig rc;
  rc.mode = DynamicsMode::ExactPotentialAscent;
  rc.eta = 1.0 / 3.0;
  rc.steps = 100;
  const auto traj = run_dynamics(spec, box, Vec::Zero(3), rc);
  const auto& pot = *spec.as<field::QuadraticPotential>();
  EXPECT_LE(lyapunov_violation(traj, pot), 1e-10);
  const auto p = theory_params_for(spec, box, rc.eta, rc.steps);
  EXPECT_LE(mapping_energy(traj), (2.0 / rc.eta) * (p.phi_max - p.phi_min) * (1 + 1e-9));
}

TEST(OrthogonalityReport, GradientFlowReturnsZero) {
  std::mt19937_64 rng(6);
  const auto g = ht::random_knn_graph(40, 2, 4, rng);
  const auto res = project_flow(g, EdgeFlow::on(g, Vec::Zero(g.num_edges())));
  EXPECT_EQ(orthogonality_report(res, g, 10), 0.0);
}

TEST(OrthogonalityReport, ConvergedSolverIsOrthogonal) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 5; ++t) {
    const auto g = ht::random_knn_graph(150, 3, 8, rng, WeightScheme::gaussian());
    const auto res = project_flow(g, EdgeFlow::on(g, ht::normal_vec(g.num_edges(), rng)));
    EXPECT_LE(orthogonality_report(res, g, 50, t), 1e-7);
  }
}

TEST(OrthogonalityReport, UnconvergedSolverIsDetected) {
  std::mt19937_64 rng(8);
  const auto g = ht::random_knn_graph(150, 3, 8, rng);
  const Vec omega = ht::normal_vec(g.num_edges(), rng);
  ProjectionOptions opts;
  opts.max_iter = 1;
  try {
    project_flow(g, EdgeFlow::on(g, omega), opts);
    FAIL() << "expected a solver error";
  } catch (const SolverError& e) {
    const auto res = assemble_projection(g, EdgeFlow::on(g, omega), e.partial(), e.residual(), e.iterations(), 1e-12);
    EXPECT_GT(orthogonality_report(res, g, 50), 1e-3);
  }
}
