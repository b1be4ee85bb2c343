#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include "hodgeflow/common.hpp"
#include "hodgeflow/domain.hpp"
#include "hodgeflow/dynamics.hpp"
#include "hodgeflow/fields.hpp"
#include "hodgeflow/projection.hpp"

namespace hodgeflow {

namespace detail {
/// min over X of <v, x> for a bounded domain.
inline double linear_min(const Vec& v, const DomainSpec& domain) {
  require_dim(v.size() == domain.dim, "gap: dimension mismatch");
  switch (domain.kind) {
    case DomainSpec::Kind::Box: {
      double s = 0.0;
      for (Index i = 0; i < v.size(); ++i) s += std::min(v[i] * domain.lo[i], v[i] * domain.hi[i]);
      return s;
    }
    case DomainSpec::Kind::SimplexProduct: {
      // linear objective over a product decomposes per block; each block's
      // minimum sits at a vertex
      double s = 0.0;
      Index off = 0;
      for (Index b : domain.blocks) {
        s += v.segment(off, b).minCoeff();
        off += b;
      }
      return s;
    }
    default:
      throw Error("gap: domain is unbounded");
  }
}
}  // namespace detail

/// Gap(xbar) = max_{x in X} <F, xbar - x> for the VI operator value F = F(xbar).
inline double stampacchia_gap(const Vec& F_at_xbar, const Vec& xbar, const DomainSpec& domain) {
  require_dim(xbar.size() == domain.dim, "stampacchia_gap: dimension mismatch");
  return F_at_xbar.dot(xbar) - detail::linear_min(F_at_xbar, domain);
}

/// Gap_Phi(x) = max_{u in X} <grad Phi(x), u - x>.
inline double gap_phi(const Vec& grad_phi, const Vec& x, const DomainSpec& domain) {
  return stampacchia_gap(-grad_phi, x, domain);
}

/// G_eta(x) = (Proj(x + eta grad) - x) / eta.
inline Vec gradient_mapping(const Vec& grad, const Vec& x, double eta, const DomainSpec& domain) {
  return (retract(domain, x + eta * grad) - x) / eta;
}

struct TheoryBoundParams {
  double D = 0.0;
  double L = 0.0;
  double G = 0.0;
  double phi_max = 0.0;
  double phi_min = 0.0;
  double eps_residual = 0.0;
  double delta_bar = 0.0;
  double eta = 0.0;
  int T = 0;

  void validate() const {
    require(D > 0.0 && L > 0.0 && G > 0.0, "TheoryBoundParams: D, L, G must be positive");
    require(phi_max >= phi_min, "TheoryBoundParams: phi_max < phi_min");
    require(eps_residual >= 0.0 && delta_bar >= 0.0, "TheoryBoundParams: negative error bounds");
    require(eta > 0.0 && T >= 1, "TheoryBoundParams: eta and T must be positive");
  }
};

namespace detail {
template <class Fn>
void for_each_vertex(const DomainSpec& box, Fn&& fn) {
  require(box.kind == DomainSpec::Kind::Box, "vertex enumeration needs a box");
  require(box.dim <= 24, "vertex enumeration limited to d <= 24");
  const std::uint64_t count = std::uint64_t{1} << box.dim;
  Vec v(box.dim);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    for (Index i = 0; i < box.dim; ++i) v[i] = (mask >> i) & 1U ? box.hi[i] : box.lo[i];
    fn(v);
  }
}
}  // namespace detail

/// Maximizer of a concave quadratic on a box by cyclic coordinate ascent.
inline Vec maximize_on_box(const field::QuadraticPotential& pot, const DomainSpec& box, int max_sweeps = 100000) {
  require(box.kind == DomainSpec::Kind::Box, "maximize_on_box: needs a box");
  Vec x = retract(box, pot.c);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double moved = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
      const double gi = -(pot.Q.row(i) * (x - pot.c))(0);
      const double xi = std::clamp(x[i] + gi / pot.Q(i, i), box.lo[i], box.hi[i]);
      moved = std::max(moved, std::abs(xi - x[i]));
      x[i] = xi;
    }
    if (moved <= 1e-15 * std::max(1.0, x.cwiseAbs().maxCoeff())) break;
  }
  return x;
}

/// D, L, G, Phi_max, Phi_min and eps for a potential-plus-skew field on a box.
/// The residual of the VI operator F = -U is R(x) = -rho S x; its norm is
/// convex, so its maximum over the box sits at a vertex.
inline TheoryBoundParams theory_params_for(const FieldSpec& spec, const DomainSpec& box, double eta, int T,
                                           double delta_bar = 0.0) {
  const auto pot = spec.reference_potential();
  if (!pot) throw Error("theory_params_for: field has no known potential/residual decomposition");
  require(box.kind == DomainSpec::Kind::Box, "theory_params_for: only box domains are supported");
  require_dim(box.dim == spec.dim(), "theory_params_for: dimension mismatch");
  TheoryBoundParams p;
  p.D = box.diameter();
  p.L = lipschitz_constant(pot->Q);
  p.phi_max = pot->value(maximize_on_box(*pot, box));
  p.phi_min = std::numeric_limits<double>::infinity();
  const auto* skew = spec.as<field::PotentialPlusSkew>();
  detail::for_each_vertex(box, [&](const Vec& v) {
    p.phi_min = std::min(p.phi_min, pot->value(v));
    p.G = std::max(p.G, pot->gradient(v).norm());
    if (skew) p.eps_residual = std::max(p.eps_residual, std::abs(skew->rho) * (skew->S * v).norm());
  });
  p.delta_bar = delta_bar;
  p.eta = eta;
  p.T = T;
  return p;
}

struct GapBoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  /// The stationarity term (everything but the additive residual part).
  double first_term = 0.0;
  int t_hat = 0;
  double mapping_norm = 0.0;
  bool inexact = false;
  bool holds = false;
};

/// Evaluates the residual-augmented gap bound on a constant-step trajectory.
/// x_hat is the iterate with the smallest step mapping ||x_{t+1} - x_t|| / eta
/// over t < T. With delta_bar > 0 the inexact-projection form is used.
inline GapBoundReport check_gap_bound(const Trajectory& traj, const TheoryBoundParams& params, const FieldSpec& spec,
                                      const DomainSpec& domain) {
  params.validate();
  if (!spec.reference_potential()) throw Error("check_gap_bound: field has no known decomposition");
  const int T = static_cast<int>(traj.iterates.rows()) - 1;
  require(T >= 1 && T == params.T, "check_gap_bound: trajectory length differs from params.T");
  for (double e : traj.etas) require(std::abs(e - params.eta) <= 1e-15 * params.eta, "check_gap_bound: needs constant eta");

  GapBoundReport rep;
  rep.mapping_norm = std::numeric_limits<double>::infinity();
  for (int t = 0; t < T; ++t) {
    const double m = (traj.iterates.row(t + 1) - traj.iterates.row(t)).norm() / params.eta;
    if (m < rep.mapping_norm) {
      rep.mapping_norm = m;
      rep.t_hat = t;
    }
  }
  const Vec xhat = traj.iterates.row(rep.t_hat).transpose();
  rep.lhs = stampacchia_gap(-eval_field(spec, xhat), xhat, domain);

  const double spread = params.phi_max - params.phi_min;
  const double Tn = static_cast<double>(T);
  rep.inexact = params.delta_bar > 0.0;
  if (!rep.inexact) {
    rep.first_term = (params.D + params.eta * params.G) * std::sqrt(2.0 * spread / (Tn * params.eta));
    rep.rhs = rep.first_term + params.D * params.eps_residual;
  } else {
    const double db = params.delta_bar;
    rep.first_term = (params.D + params.eta * (params.G + db)) * std::sqrt(4.0 * spread / (Tn * params.eta) + 4.0 * db * db);
    rep.rhs = rep.first_term + params.D * (params.eps_residual + db);
  }
  rep.holds = rep.lhs <= rep.rhs * (1.0 + 1e-9);
  return rep;
}

/// Largest shortfall (1/(2 eta)) ||x_{t+1} - x_t||^2 - (Phi(x_{t+1}) - Phi(x_t))
/// along the trajectory; <= 0 means every step improved Phi by the bound.
inline double lyapunov_violation(const Trajectory& traj, const field::QuadraticPotential& pot) {
  double worst = -std::numeric_limits<double>::infinity();
  for (Index t = 0; t + 1 < traj.iterates.rows(); ++t) {
    const Vec x = traj.iterates.row(t).transpose();
    const Vec y = traj.iterates.row(t + 1).transpose();
    const double eta = traj.etas[static_cast<std::size_t>(t)];
    worst = std::max(worst, (y - x).squaredNorm() / (2.0 * eta) - (pot.value(y) - pot.value(x)));
  }
  return worst;
}

/// sum_t ||G_eta(x_t)||^2 over the recorded steps.
inline double mapping_energy(const Trajectory& traj) {
  double s = 0.0;
  for (Index t = 0; t + 1 < traj.iterates.rows(); ++t) {
    const double eta = traj.etas[static_cast<std::size_t>(t)];
    s += (traj.iterates.row(t + 1) - traj.iterates.row(t)).squaredNorm() / (eta * eta);
  }
  return s;
}

/// max over `trials` random psi of |(B psi)^T W omega_cyc| / (||B psi||_W ||omega_cyc||_W).
inline double orthogonality_report(const ProjectionResult& result, const SampleGraph& graph, int trials,
                                   std::uint64_t seed = 0) {
  require(result.omega_cyc.bound_to(graph), "orthogonality_report: result is not bound to this graph");
  const double cyc_norm = std::sqrt(result.energy_cyc);
  if (cyc_norm == 0.0) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  Vec psi(graph.num_nodes());
  for (int t = 0; t < trials; ++t) {
    for (Index i = 0; i < psi.size(); ++i) psi[i] = normal(rng);
    const Vec bpsi = apply_incidence(graph, psi);
    const double bn = std::sqrt(weighted_energy(graph, bpsi));
    if (bn == 0.0) continue;
    worst = std::max(worst, std::abs(weighted_inner(graph, bpsi, result.omega_cyc.values)) / (bn * cyc_norm));
  }
  return worst;
}

}  // namespace hodgeflow
