#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <type_traits>
#include <utility>
#include <variant>

#include "hodgeflow/common.hpp"
#include "hodgeflow/graph.hpp"
#include "hodgeflow/metric.hpp"

namespace hodgeflow {

namespace field {

/// Two-player Rock-Paper-Scissors on the product of 3-simplices, x = (p, q).
struct Rps {
  /// Row player's payoff, own action by row (win +1, lose -1, tie 0).
  Mat payoff = (Mat(3, 3) << 0, -1, 1, 1, 0, -1, -1, 1, 0).finished();
};

/// U(z) = -damping * z + rho * J z with J = [[0,1],[-1,0]].
struct BilinearSkew2D {
  double rho = 1.0;
  double damping = 1.0;
};

/// Logit-parameterized 2x2 game: x = (a, b), p = sigma(a), q = sigma(b).
struct Logistic2x2 {
  Eigen::Matrix2d A = (Eigen::Matrix2d() << 1, -1, -1, 1).finished();
  Eigen::Matrix2d B = -(Eigen::Matrix2d() << 1, -1, -1, 1).finished();
};

/// U(z) = -z + rho * S z with S skew.
struct Linear3D {
  double rho = 0.5;
  Eigen::Matrix3d S = (Eigen::Matrix3d() << 0, 1, 0, -1, 0, 0, 0, 0, 0).finished();
};

/// Ascent field of Phi(x) = -1/2 (x-c)^T Q (x-c), i.e. U(x) = -Q (x - c).
struct QuadraticPotential {
  Mat Q;
  Vec c;

  double value(const Vec& x) const {
    const Vec d = x - c;
    return -0.5 * d.dot(Q * d);
  }
  Vec gradient(const Vec& x) const { return -(Q * (x - c)); }
};

/// base ascent field plus rho * S x.
struct PotentialPlusSkew {
  QuadraticPotential base;
  Mat S;
  double rho = 0.0;
};

/// Field known only at samples; evaluation returns the nearest sample's value.
struct Tabulated {
  PointMat points;
  PointMat values;
};

}  // namespace field

/// An evaluatable joint update (ascent) field U : R^d -> R^d.
class FieldSpec {
 public:
  using Variant = std::variant<field::Rps, field::BilinearSkew2D, field::Logistic2x2, field::Linear3D,
                               field::QuadraticPotential, field::PotentialPlusSkew, field::Tabulated>;

  static FieldSpec rps(field::Rps f = {}) {
    require_dim(f.payoff.rows() == 3 && f.payoff.cols() == 3, "FieldSpec: RPS payoff must be 3x3");
    return FieldSpec(std::move(f), 6);
  }
  static FieldSpec bilinear_skew_2d(double rho, double damping = 1.0) {
    return FieldSpec(field::BilinearSkew2D{rho, damping}, 2);
  }
  static FieldSpec logistic_2x2(field::Logistic2x2 f = {}) {
    require(f.A.allFinite() && f.B.allFinite(), "FieldSpec: payoffs must be finite");
    return FieldSpec(std::move(f), 2);
  }
  static FieldSpec linear_3d(double rho, const Eigen::Matrix3d& S) {
    check_skew(S);
    return FieldSpec(field::Linear3D{rho, S}, 3);
  }
  static FieldSpec quadratic_potential(const Mat& Q, const Vec& c) {
    check_spd(Q);
    require_dim(c.size() == Q.rows(), "FieldSpec: c dimension mismatch");
    return FieldSpec(field::QuadraticPotential{Q, c}, Q.rows());
  }
  static FieldSpec potential_plus_skew(const Mat& Q, const Vec& c, const Mat& S, double rho) {
    check_spd(Q);
    check_skew(S);
    require_dim(c.size() == Q.rows() && S.rows() == Q.rows(), "FieldSpec: dimension mismatch");
    return FieldSpec(field::PotentialPlusSkew{{Q, c}, S, rho}, Q.rows());
  }
  static FieldSpec tabulated(PointMat points, PointMat values) {
    require(points.rows() >= 1, "FieldSpec: tabulated field needs samples");
    require_dim(points.rows() == values.rows() && points.cols() == values.cols(),
                "FieldSpec: tabulated points/values shape mismatch");
    const Index d = points.cols();
    return FieldSpec(field::Tabulated{std::move(points), std::move(values)}, d);
  }

  Index dim() const { return dim_; }
  const Variant& variant() const { return v_; }
  template <class T>
  const T* as() const {
    return std::get_if<T>(&v_);
  }

  /// Concave quadratic potential whose ascent field is the field's
  /// gradient part, when the field has one by construction.
  std::optional<field::QuadraticPotential> reference_potential() const {
    if (auto* q = as<field::QuadraticPotential>()) return *q;
    if (auto* p = as<field::PotentialPlusSkew>()) return p->base;
    return std::nullopt;
  }

  static void check_skew(const Mat& S) {
    require_dim(S.rows() == S.cols(), "FieldSpec: skew matrix must be square");
    require((S + S.transpose()).cwiseAbs().maxCoeff() <= 1e-12, "FieldSpec: matrix is not skew-symmetric");
  }
  static void check_spd(const Mat& Q) {
    require_dim(Q.rows() == Q.cols() && Q.rows() > 0, "FieldSpec: Q must be square");
    require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, Q.cwiseAbs().maxCoeff()),
            "FieldSpec: Q is not symmetric");
    Eigen::LLT<Mat> llt(Q);
    require(llt.info() == Eigen::Success, "FieldSpec: Q is not positive definite");
  }

 private:
  FieldSpec(Variant v, Index dim) : v_(std::move(v)), dim_(dim) {}

  Variant v_;
  Index dim_;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Expected payoffs (J1, J2) of the logistic 2x2 game at logits (a, b).
inline std::pair<double, double> logistic_payoffs(const field::Logistic2x2& g, double a, double b) {
  const Eigen::Vector2d p(sigmoid(a), 1.0 - sigmoid(a));
  const Eigen::Vector2d q(sigmoid(b), 1.0 - sigmoid(b));
  return {p.dot(g.A * q), p.dot(g.B * q)};
}

namespace detail {

inline Vec eval_unchecked(const FieldSpec& spec, const Vec& x) {
  return std::visit(
      [&](const auto& f) -> Vec {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, field::Rps>) {
          const Vec p = x.head(3);
          const Vec q = x.tail(3);
          Vec u1 = f.payoff * q;
          Vec u2 = f.payoff * p;
          u1.array() -= u1.mean();
          u2.array() -= u2.mean();
          Vec out(6);
          out << u1, u2;
          return out;
        } else if constexpr (std::is_same_v<T, field::BilinearSkew2D>) {
          return Vec((Vec(2) << -f.damping * x[0] + f.rho * x[1], -f.damping * x[1] - f.rho * x[0]).finished());
        } else if constexpr (std::is_same_v<T, field::Logistic2x2>) {
          const double p = sigmoid(x[0]);
          const double q = sigmoid(x[1]);
          const double margin1 = (f.A(0, 0) - f.A(1, 0)) * q + (f.A(0, 1) - f.A(1, 1)) * (1.0 - q);
          const double margin2 = (f.B(0, 0) - f.B(0, 1)) * p + (f.B(1, 0) - f.B(1, 1)) * (1.0 - p);
          return Vec((Vec(2) << p * (1.0 - p) * margin1, q * (1.0 - q) * margin2).finished());
        } else if constexpr (std::is_same_v<T, field::Linear3D>) {
          return Vec(-x + f.rho * (f.S * x));
        } else if constexpr (std::is_same_v<T, field::QuadraticPotential>) {
          return f.gradient(x);
        } else if constexpr (std::is_same_v<T, field::PotentialPlusSkew>) {
          return Vec(f.base.gradient(x) + f.rho * (f.S * x));
        } else {
          Index best = 0;
          double best_d = std::numeric_limits<double>::infinity();
          for (Index i = 0; i < f.points.rows(); ++i) {
            const double d = (f.points.row(i).transpose() - x).squaredNorm();
            if (d < best_d) {
              best_d = d;
              best = i;
            }
          }
          return f.values.row(best).transpose();
        }
      },
      spec.variant());
}

}  // namespace detail

/// Evaluates the ascent field U(x).
inline Vec eval_field(const FieldSpec& spec, const Vec& x) {
  require_dim(x.size() == spec.dim(), "eval_field: dimension mismatch");
  require(x.allFinite(), "eval_field: non-finite point");
  if (spec.as<field::Rps>()) {
    for (Index block = 0; block < 2; ++block) {
      const auto seg = x.segment(3 * block, 3);
      if (seg.minCoeff() < -1e-9 || std::abs(seg.sum() - 1.0) > 1e-9) {
        throw Error("eval_field: RPS point is not on the simplex product");
      }
    }
  }
  return detail::eval_unchecked(spec, x);
}

/// Central-difference Jacobian J[i][j] = dU_i/dx_j.
inline Mat jacobian_fd(const FieldSpec& spec, const Vec& x, double h = 1e-5) {
  require(!spec.as<field::Tabulated>(), "jacobian_fd: tabulated fields are not differentiable");
  require_dim(x.size() == spec.dim(), "jacobian_fd: dimension mismatch");
  const Index d = x.size();
  Mat J(d, d);
  Vec xp = x;
  Vec xm = x;
  for (Index j = 0; j < d; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    J.col(j) = (detail::eval_unchecked(spec, xp) - detail::eval_unchecked(spec, xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return J;
}

/// Generic central-difference Jacobian for any callable R^d -> R^d.
template <class Fn>
  requires std::invocable<Fn&, const Vec&>
Mat jacobian_fd(Fn&& fn, const Vec& x, double h = 1e-5) {
  const Index d = x.size();
  Mat J;
  Vec xp = x;
  Vec xm = x;
  for (Index j = 0; j < d; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Vec col = (fn(xp) - fn(xm)) / (2.0 * h);
    if (j == 0) J.resize(col.size(), d);
    J.col(j) = col;
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return J;
}

struct JacobianSplit {
  Mat J;
  Mat S_sym;
  Mat A_anti;
  /// ||A_anti||_F^2
  double rot_energy = 0.0;
};

inline JacobianSplit jacobian_split(const Mat& J) {
  require_dim(J.rows() == J.cols(), "jacobian_split: J must be square");
  JacobianSplit out;
  out.J = J;
  out.S_sym = 0.5 * (J + J.transpose());
  out.A_anti = 0.5 * (J - J.transpose());
  out.rot_energy = out.A_anti.squaredNorm();
  return out;
}

}  // namespace hodgeflow
