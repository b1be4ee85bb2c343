#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "hodgeflow/common.hpp"

namespace hodgeflow {

/// Feasible set X.
///
/// `CenteredBlocks` is the affine subspace where every block sums to zero;
/// it is the gauge-fixed logit space used by softmax policies.
struct DomainSpec {
  enum class Kind { Unconstrained, Box, SimplexProduct, CenteredBlocks };
  Kind kind = Kind::Unconstrained;
  Index dim = 0;
  Vec lo;
  Vec hi;
  std::vector<Index> blocks;

  static DomainSpec unconstrained(Index dim) {
    require(dim > 0, "DomainSpec: dim must be positive");
    return {Kind::Unconstrained, dim, {}, {}, {}};
  }
  static DomainSpec box(const Vec& lo, const Vec& hi) {
    require_dim(lo.size() == hi.size() && lo.size() > 0, "DomainSpec: box bounds size mismatch");
    require((lo.array() < hi.array()).all(), "DomainSpec: box requires lo < hi");
    return {Kind::Box, lo.size(), lo, hi, {}};
  }
  static DomainSpec box(Index dim, double lo, double hi) {
    return box(Vec::Constant(dim, lo), Vec::Constant(dim, hi));
  }
  static DomainSpec simplex_product(std::vector<Index> blocks) {
    return blocked(Kind::SimplexProduct, std::move(blocks));
  }
  static DomainSpec centered_blocks(std::vector<Index> blocks) {
    return blocked(Kind::CenteredBlocks, std::move(blocks));
  }

  bool bounded() const { return kind == Kind::Box || kind == Kind::SimplexProduct; }

  /// max ||x - y|| over X (infinite when unbounded).
  double diameter() const {
    switch (kind) {
      case Kind::Box:
        return (hi - lo).norm();
      case Kind::SimplexProduct: {
        double s = 0.0;
        for (Index b : blocks) s += b > 1 ? 2.0 : 0.0;
        return std::sqrt(s);
      }
      default:
        return std::numeric_limits<double>::infinity();
    }
  }

  bool contains(const Vec& x, double tol = 1e-9) const {
    if (x.size() != dim || !x.allFinite()) return false;
    switch (kind) {
      case Kind::Unconstrained:
        return true;
      case Kind::Box:
        return ((x - lo).array() >= -tol).all() && ((hi - x).array() >= -tol).all();
      case Kind::SimplexProduct: {
        Index off = 0;
        for (Index b : blocks) {
          const auto seg = x.segment(off, b);
          if (seg.minCoeff() < -tol || std::abs(seg.sum() - 1.0) > tol) return false;
          off += b;
        }
        return true;
      }
      case Kind::CenteredBlocks: {
        Index off = 0;
        for (Index b : blocks) {
          if (std::abs(x.segment(off, b).sum()) > tol * std::max(1.0, x.segment(off, b).cwiseAbs().sum())) return false;
          off += b;
        }
        return true;
      }
    }
    return false;
  }

 private:
  static DomainSpec blocked(Kind kind, std::vector<Index> blocks) {
    require(!blocks.empty(), "DomainSpec: need at least one block");
    Index total = 0;
    for (Index b : blocks) {
      require(b >= 1, "DomainSpec: block sizes must be positive");
      total += b;
    }
    return {kind, total, {}, {}, std::move(blocks)};
  }
};

/// Euclidean projection onto the probability simplex (sort-based, exact).
inline Vec project_simplex(const Vec& y) {
  const Index n = y.size();
  std::vector<double> u(y.data(), y.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (Index i = 0; i < n; ++i) {
    cumsum += u[static_cast<std::size_t>(i)];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) tau = t;
  }
  return (y.array() - tau).cwiseMax(0.0).matrix();
}

/// Euclidean projection onto the domain.
inline Vec retract(const DomainSpec& domain, const Vec& y) {
  require_dim(y.size() == domain.dim, "retract: dimension mismatch");
  require(y.allFinite(), "retract: non-finite point");
  switch (domain.kind) {
    case DomainSpec::Kind::Unconstrained:
      return y;
    case DomainSpec::Kind::Box:
      return y.cwiseMax(domain.lo).cwiseMin(domain.hi);
    case DomainSpec::Kind::SimplexProduct: {
      Vec out(y.size());
      Index off = 0;
      for (Index b : domain.blocks) {
        out.segment(off, b) = project_simplex(y.segment(off, b));
        off += b;
      }
      return out;
    }
    case DomainSpec::Kind::CenteredBlocks: {
      Vec out = y;
      Index off = 0;
      for (Index b : domain.blocks) {
        out.segment(off, b).array() -= out.segment(off, b).mean();
        off += b;
      }
      return out;
    }
  }
  return y;
}

/// Box midpoint, simplex barycenter, or the origin.
inline Vec domain_center(const DomainSpec& domain) {
  switch (domain.kind) {
    case DomainSpec::Kind::Box:
      return 0.5 * (domain.lo + domain.hi);
    case DomainSpec::Kind::SimplexProduct: {
      Vec c(domain.dim);
      Index off = 0;
      for (Index b : domain.blocks) {
        c.segment(off, b).setConstant(1.0 / static_cast<double>(b));
        off += b;
      }
      return c;
    }
    default:
      return Vec::Zero(domain.dim);
  }
}

/// Radius of the largest ball (within the affine hull) centered at
/// domain_center that stays feasible.
inline double domain_inradius(const DomainSpec& domain) {
  switch (domain.kind) {
    case DomainSpec::Kind::Box:
      return 0.5 * (domain.hi - domain.lo).minCoeff();
    case DomainSpec::Kind::SimplexProduct: {
      double r = std::numeric_limits<double>::infinity();
      for (Index b : domain.blocks) {
        if (b > 1) r = std::min(r, 1.0 / std::sqrt(static_cast<double>(b * (b - 1))));
      }
      return r;
    }
    default:
      return std::numeric_limits<double>::infinity();
  }
}

/// Removes the per-block mean for blocked kinds, so v lies in the
/// domain's tangent space.
inline Vec tangent_part(const DomainSpec& domain, Vec v) {
  if (domain.kind == DomainSpec::Kind::SimplexProduct || domain.kind == DomainSpec::Kind::CenteredBlocks) {
    Index off = 0;
    for (Index b : domain.blocks) {
      v.segment(off, b).array() -= v.segment(off, b).mean();
      off += b;
    }
  }
  return v;
}

/// Uniform sample from the ball of the given radius around `center` inside
/// the domain's affine hull, retracted onto the domain.
template <class Rng>
Vec sample_tangent_ball(const DomainSpec& domain, Rng& rng, const Vec& center, double radius) {
  require_dim(center.size() == domain.dim, "sample_tangent_ball: center dimension mismatch");
  Index m = domain.dim;
  if (domain.kind == DomainSpec::Kind::SimplexProduct || domain.kind == DomainSpec::Kind::CenteredBlocks) {
    m -= static_cast<Index>(domain.blocks.size());
  }
  if (m <= 0) return retract(domain, center);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vec dir;
  do {
    Vec g(domain.dim);
    for (Index i = 0; i < domain.dim; ++i) g[i] = normal(rng);
    dir = tangent_part(domain, g);
  } while (dir.norm() < 1e-12);
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(m));
  return retract(domain, center + r * dir.normalized());
}

/// Uniform sample from a bounded domain. For unbounded kinds the sample is
/// drawn from the box [center - half_width, center + half_width] and then
/// retracted.
template <class Rng>
Vec sample_domain(const DomainSpec& domain, Rng& rng, const Vec& center, double half_width) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vec x(domain.dim);
  switch (domain.kind) {
    case DomainSpec::Kind::Box:
      for (Index i = 0; i < domain.dim; ++i) x[i] = domain.lo[i] + (domain.hi[i] - domain.lo[i]) * unif(rng);
      return x;
    case DomainSpec::Kind::SimplexProduct: {
      std::exponential_distribution<double> expo(1.0);
      Index off = 0;
      for (Index b : domain.blocks) {
        for (Index i = 0; i < b; ++i) x[off + i] = expo(rng);
        x.segment(off, b) /= x.segment(off, b).sum();
        off += b;
      }
      return x;
    }
    default:
      for (Index i = 0; i < domain.dim; ++i) x[i] = center[i] + half_width * (2.0 * unif(rng) - 1.0);
      return retract(domain, x);
  }
}

}  // namespace hodgeflow
