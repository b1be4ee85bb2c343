#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "hodgeflow/common.hpp"

namespace hodgeflow {

/// Constant SPD metric M defining <u,v>_M = u^T M v.
///
/// The identity metric stores nothing and every operation short-circuits.
/// An SPD metric caches its lower Cholesky factor so that M^{-1} applications
/// and M-distances cost two triangular solves / one triangular product.
class Metric {
 public:
  enum class Kind { Identity, SPDMatrix };

  static Metric identity(Index dim) {
    require(dim > 0, "Metric: dim must be positive");
    Metric m;
    m.dim_ = dim;
    return m;
  }

  static Metric spd(const Mat& matrix) {
    require_dim(matrix.rows() == matrix.cols() && matrix.rows() > 0, "Metric: matrix must be square and nonempty");
    require(matrix.allFinite(), "Metric: matrix has non-finite entries");
    const double scale = std::max(1.0, matrix.cwiseAbs().maxCoeff());
    require((matrix - matrix.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, "Metric: matrix is not symmetric");
    Eigen::LLT<Mat> llt(matrix);
    if (llt.info() != Eigen::Success) throw Error("Metric: Cholesky factorization failed (matrix not SPD)");
    const Mat l = llt.matrixL();
    for (Index i = 0; i < l.rows(); ++i) {
      if (!(l(i, i) > 0.0)) throw Error("Metric: nonpositive Cholesky pivot");
    }
    Metric m;
    m.dim_ = matrix.rows();
    m.kind_ = Kind::SPDMatrix;
    m.matrix_ = matrix;
    m.chol_ = l;
    return m;
  }

  Kind kind() const { return kind_; }
  Index dim() const { return dim_; }
  bool is_identity() const { return kind_ == Kind::Identity; }

  /// The dense matrix (materialized on demand for the identity).
  Mat matrix() const { return is_identity() ? Mat(Mat::Identity(dim_, dim_)) : *matrix_; }
  const std::optional<Mat>& stored_matrix() const { return matrix_; }
  const std::optional<Mat>& chol() const { return chol_; }

  Vec apply(const Vec& v) const {
    check(v);
    return is_identity() ? v : Vec(*matrix_ * v);
  }

  Vec solve(const Vec& v) const {
    check(v);
    if (is_identity()) return v;
    const auto l = chol_->triangularView<Eigen::Lower>();
    return l.transpose().solve(l.solve(v));
  }

  double inner(const Vec& u, const Vec& v) const { return u.dot(apply(v)); }
  double norm_sq(const Vec& v) const { return inner(v, v); }
  double norm(const Vec& v) const { return std::sqrt(norm_sq(v)); }

  /// L^T v, so that ||L^T (x - y)||_2 = Dist_M(x, y).
  Vec whiten(const Vec& v) const {
    check(v);
    return is_identity() ? v : Vec(chol_->transpose() * v);
  }

  double distance(const Vec& x, const Vec& y) const { return whiten(x - y).norm(); }

 private:
  Metric() = default;

  void check(const Vec& v) const {
    require_dim(v.size() == dim_, "Metric: vector dimension mismatch");
  }

  Kind kind_ = Kind::Identity;
  Index dim_ = 0;
  std::optional<Mat> matrix_;
  std::optional<Mat> chol_;
};

}  // namespace hodgeflow
