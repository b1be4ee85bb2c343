#include <gtest/gtest.h>

#include <random>

#include "hodgeflow/fields.hpp"
#include "test_support.hpp"

using namespace hodgeflow;

namespace {

Mat random_spd(Index d, std::mt19937_64& rng) {
  const Mat a = Mat::NullaryExpr(d, d, [&] { return std::normal_distribution<double>(0, 1)(rng); });
  return a * a.transpose() + 0.5 * Mat::Identity(d, d);
}

Mat random_skew(Index d, std::mt19937_64& rng) {
  const Mat a = Mat::NullaryExpr(d, d, [&] { return std::normal_distribution<double>(0, 1)(rng); });
  return a - a.transpose();
}

}  // namespace

TEST(EvalField, BilinearSkewAtUnitX) {
  const auto f = FieldSpec::bilinear_skew_2d(1.0);
  EXPECT_EQ(eval_field(f, (Vec(2) << 1, 0).finished()), (Vec(2) << -1, -1).finished());
}

TEST(EvalField, PureSkewVariant) {
  const auto f = FieldSpec::bilinear_skew_2d(1.0, 0.0);
  EXPECT_EQ(eval_field(f, (Vec(2) << 2, 3).finished()), (Vec(2) << 3, -2).finished());
}

TEST(EvalField, RpsUniformProfileIsEquilibrium) {
  const auto f = FieldSpec::rps();
  const Vec x = Vec::Constant(6, 1.0 / 3.0);
  EXPECT_LE(eval_field(f, x).norm(), 1e-9);
}

TEST(EvalField, RpsFieldIsTangentToBothSimplices) {
  const auto f = FieldSpec::rps();
  const Vec x = (Vec(6) << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6).finished();
  const Vec u = eval_field(f, x);
  EXPECT_NEAR(u.head(3).sum(), 0.0, 1e-15);
  EXPECT_NEAR(u.tail(3).sum(), 0.0, 1e-15);
  // payoff of rock against q = (0.2, 0.2, 0.6): -0.2 + 0.6 = 0.4
  EXPECT_NEAR(u[0], 0.4, 1e-15);
}

TEST(EvalField, RpsRejectsOffSimplexPoints) {
  const auto f = FieldSpec::rps();
  EXPECT_THROW(eval_field(f, (Vec(6) << 0.5, 0.5, 0.5, 1, 0, 0).finished()), Error);
  EXPECT_THROW(eval_field(f, (Vec(6) << 1.1, -0.1, 0, 1, 0, 0).finished()), Error);
}

TEST(EvalField, Linear3DMatrixMultiply) {
  Eigen::Matrix3d S;
  S << 0, 1, 0, -1, 0, 0, 0, 0, 0;
  const auto f = FieldSpec::linear_3d(0.5, S);
  const Vec out = eval_field(f, Vec::Ones(3));
  EXPECT_LT((out - (Vec(3) << -0.5, -1.5, -1).finished()).norm(), 1e-15);
}

TEST(EvalField, DimensionMismatch) {
  EXPECT_THROW(eval_field(FieldSpec::bilinear_skew_2d(1.0), Vec::Zero(3)), DimensionError);
}

TEST(EvalField, TabulatedNearestSample) {
  PointMat pts(2, 2);
  pts << 0, 0, 1, 1;
  PointMat vals(2, 2);
  vals << 1, 2, 3, 4;
  const auto f = FieldSpec::tabulated(pts, vals);
  EXPECT_EQ(eval_field(f, (Vec(2) << 0.9, 0.8).finished()), (Vec(2) << 3, 4).finished());
  EXPECT_THROW(FieldSpec::tabulated(pts, PointMat(3, 2)), DimensionError);
  EXPECT_THROW(jacobian_fd(f, Vec::Zero(2)), Error);
}

TEST(FieldSpec, ValidatesSkewAndSpd) {
  Eigen::Matrix3d notskew = Eigen::Matrix3d::Identity();
  EXPECT_THROW(FieldSpec::linear_3d(0.5, notskew), Error);
  Mat indefinite(2, 2);
  indefinite << 1, 0, 0, -1;
  EXPECT_THROW(FieldSpec::quadratic_potential(indefinite, Vec::Zero(2)), Error);
}

TEST(JacobianFd, QuadraticIsMinusIdentity) {
  const auto f = FieldSpec::quadratic_potential(Mat::Identity(3, 3), Vec::Zero(3));
  const Mat J = jacobian_fd(f, (Vec(3) << 0.3, -2, 5).finished());
  EXPECT_LT((J + Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(JacobianFd, BilinearSkewAnalytic) {
  for (double rho : {0.0, 0.3, 2.0}) {
    const auto f = FieldSpec::bilinear_skew_2d(rho);
    Mat expected(2, 2);
    expected << -1, rho, -rho, -1;
    EXPECT_LT((jacobian_fd(f, (Vec(2) << 0.7, -0.1).finished()) - expected).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(JacobianFd, Linear3DAnalytic) {
  std::mt19937_64 rng(1);
  const Mat S = random_skew(3, rng);
  const auto f = FieldSpec::linear_3d(0.7, S);
  const Mat J = jacobian_fd(f, (Vec(3) << 1, 2, 3).finished());
  EXPECT_LT((J - (-Mat::Identity(3, 3) + 0.7 * S)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(JacobianSplit, IdentityIsSymmetric) {
  const auto s = jacobian_split(Mat::Identity(3, 3));
  EXPECT_EQ(s.S_sym, Mat::Identity(3, 3));
  EXPECT_EQ(s.A_anti, Mat::Zero(3, 3));
  EXPECT_EQ(s.rot_energy, 0.0);
}

TEST(JacobianSplit, CanonicalRotationIsPurelyAntisymmetric) {
  Mat J(2, 2);
  J << 0, 1, -1, 0;
  const auto s = jacobian_split(J);
  EXPECT_EQ(s.A_anti, J);
  EXPECT_EQ(s.rot_energy, 2.0);
}

TEST(JacobianSplit, DampedRotationEnergy) {
  for (double rho : {0.25, 1.0, 3.0}) {
    Mat J(2, 2);
    J << -1, rho, -rho, -1;
    EXPECT_NEAR(jacobian_split(J).rot_energy, 2.0 * rho * rho, 1e-14);
  }
}

TEST(JacobianSplit, PartsRecombine) {
  std::mt19937_64 rng(8);
  const Mat J = Mat::NullaryExpr(5, 5, [&] { return std::normal_distribution<double>(0, 1)(rng); });
  const auto s = jacobian_split(J);
  EXPECT_LE((s.S_sym + s.A_anti - J).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(s.S_sym, s.S_sym.transpose());
  EXPECT_EQ(s.A_anti, -s.A_anti.transpose());
}

TEST(FieldProperties, GradientFieldsHaveNoRotationalEnergy) {
  std::mt19937_64 rng(21);
  const auto f = FieldSpec::quadratic_potential(random_spd(4, rng), hodgeflow::testing::normal_vec(4, rng));
  for (int i = 0; i < 20; ++i) {
    const Vec x = hodgeflow::testing::normal_vec(4, rng, 2.0);
    EXPECT_LE(jacobian_split(jacobian_fd(f, x)).rot_energy, 1e-6);
  }
}

TEST(FieldProperties, PotentialPlusSkewAntisymmetricPartIsRhoS) {
  std::mt19937_64 rng(22);
  const Mat S = random_skew(4, rng);
  const auto f = FieldSpec::potential_plus_skew(random_spd(4, rng), Vec::Zero(4), S, 0.6);
  for (int i = 0; i < 5; ++i) {
    const auto split = jacobian_split(jacobian_fd(f, hodgeflow::testing::normal_vec(4, rng)));
    EXPECT_LE((split.A_anti - 0.6 * S).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FieldProperties, LogisticFieldMatchesPayoffFiniteDifferences) {
  std::mt19937_64 rng(23);
  field::Logistic2x2 game;
  game.A << 3, 0, 5, 1;
  game.B << 3, 5, 0, 1;
  for (const auto& g : {field::Logistic2x2{}, game}) {
    const auto f = FieldSpec::logistic_2x2(g);
    for (int i = 0; i < 20; ++i) {
      const Vec x = hodgeflow::testing::normal_vec(2, rng, 1.5);
      const double h = 1e-5;
      const double d1 = (logistic_payoffs(g, x[0] + h, x[1]).first - logistic_payoffs(g, x[0] - h, x[1]).first) / (2 * h);
      const double d2 = (logistic_payoffs(g, x[0], x[1] + h).second - logistic_payoffs(g, x[0], x[1] - h).second) / (2 * h);
      const Vec u = eval_field(f, x);
      EXPECT_NEAR(u[0], d1, 1e-6);
      EXPECT_NEAR(u[1], d2, 1e-6);
    }
  }
}

TEST(FieldProperties, MatchingPenniesLogisticIsRotationalAtCenter) {
  const auto split = jacobian_split(jacobian_fd(FieldSpec::logistic_2x2(), Vec::Zero(2)));
  EXPECT_GT(split.rot_energy, 1e-3);
  EXPECT_LE(split.S_sym.cwiseAbs().maxCoeff(), 1e-8);
}
