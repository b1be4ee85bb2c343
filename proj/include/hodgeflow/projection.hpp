#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hodgeflow/common.hpp"
#include "hodgeflow/graph.hpp"
#include "hodgeflow/metric.hpp"

namespace hodgeflow {

/// Discrete 1-form: one value per oriented edge of the graph it is bound to.
struct EdgeFlow {
  Vec values;
  std::uint64_t graph_id = 0;

  static EdgeFlow on(const SampleGraph& graph, Vec values) {
    require_dim(values.size() == graph.num_edges(), "EdgeFlow: length differs from edge count");
    return {std::move(values), graph.id()};
  }
  bool bound_to(const SampleGraph& graph) const {
    return graph_id == graph.id() && values.size() == graph.num_edges();
  }
};

struct ProjectionResult {
  NodePotential phi;
  EdgeFlow omega_pot;
  EdgeFlow omega_cyc;
  double energy_total = 0.0;
  double energy_pot = 0.0;
  double energy_cyc = 0.0;
  double nonpot = 0.0;
  double solver_residual = 0.0;
  int solver_iterations = 0;
};

struct ProjectionOptions {
  double eps = 1e-12;
  double tol = 1e-10;
  /// 0 selects the solver default.
  int max_iter = 0;
};

/// omega_e = <M (F_i + F_j)/2, x_j - x_i> for each oriented edge i -> j.
inline EdgeFlow edge_flow(const SampleGraph& graph, const PointMat& field_values, const Metric& metric) {
  require_dim(field_values.rows() == graph.num_nodes(), "edge_flow: field row count differs from node count");
  require_dim(field_values.cols() == graph.dim(), "edge_flow: field dimension differs from positions");
  require_dim(metric.dim() == graph.dim(), "edge_flow: metric dimension mismatch");
  Vec omega(graph.num_edges());
  const auto& x = graph.positions();
  const auto& edges = graph.edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    const Vec mid = 0.5 * (field_values.row(i) + field_values.row(j)).transpose();
    const Vec dx = (x.row(j) - x.row(i)).transpose();
    omega[static_cast<Index>(e)] = metric.is_identity() ? mid.dot(dx) : metric.apply(mid).dot(dx);
  }
  return {std::move(omega), graph.id()};
}

/// (B phi)_e = phi_j - phi_i.
inline Vec apply_incidence(const SampleGraph& graph, const Vec& phi) {
  require_dim(phi.size() == graph.num_nodes(), "apply_incidence: length mismatch");
  Vec out(graph.num_edges());
  const auto& edges = graph.edges();
  for (std::size_t e = 0; e < edges.size(); ++e) out[static_cast<Index>(e)] = phi[edges[e].j] - phi[edges[e].i];
  return out;
}

/// B^T W omega: each edge adds w_e omega_e to its head and subtracts it from its tail.
inline Vec weighted_divergence(const SampleGraph& graph, const Vec& omega) {
  require_dim(omega.size() == graph.num_edges(), "weighted_divergence: length mismatch");
  Vec b = Vec::Zero(graph.num_nodes());
  const auto& edges = graph.edges();
  const auto& w = graph.weights();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double f = w[e] * omega[static_cast<Index>(e)];
    b[edges[e].j] += f;
    b[edges[e].i] -= f;
  }
  return b;
}

/// ||omega||_W^2 = sum_e w_e omega_e^2
inline double weighted_energy(const SampleGraph& graph, const Vec& omega) {
  require_dim(omega.size() == graph.num_edges(), "weighted_energy: length mismatch");
  double s = 0.0;
  const auto& w = graph.weights();
  for (Index e = 0; e < omega.size(); ++e) s += w[static_cast<std::size_t>(e)] * omega[e] * omega[e];
  return s;
}

inline double weighted_inner(const SampleGraph& graph, const Vec& a, const Vec& b) {
  require_dim(a.size() == graph.num_edges() && b.size() == graph.num_edges(), "weighted_inner: length mismatch");
  double s = 0.0;
  const auto& w = graph.weights();
  for (Index e = 0; e < a.size(); ++e) s += w[static_cast<std::size_t>(e)] * a[e] * b[e];
  return s;
}

/// Splits omega given a (possibly approximate) potential: omega_pot = B phi,
/// omega_cyc = omega - omega_pot, and the energy bookkeeping.
inline ProjectionResult assemble_projection(const SampleGraph& graph, const EdgeFlow& omega, NodePotential phi,
                                            double solver_residual, int solver_iterations, double eps = 1e-12) {
  require(omega.bound_to(graph), "assemble_projection: edge flow is not bound to this graph");
  ProjectionResult r;
  r.omega_pot = EdgeFlow{apply_incidence(graph, phi.values), graph.id()};
  r.omega_cyc = EdgeFlow{omega.values - r.omega_pot.values, graph.id()};
  r.phi = std::move(phi);
  r.energy_total = weighted_energy(graph, omega.values);
  r.energy_pot = weighted_energy(graph, r.omega_pot.values);
  r.energy_cyc = weighted_energy(graph, r.omega_cyc.values);
  r.nonpot = r.energy_cyc / (r.energy_total + eps);
  r.solver_residual = solver_residual;
  r.solver_iterations = solver_iterations;
  return r;
}

/// Weighted least-squares projection of omega onto discrete gradient flows:
/// solves L phi* = B^T W omega in the zero-mean gauge.
inline ProjectionResult project_flow(const SampleGraph& graph, const EdgeFlow& omega, ProjectionOptions opts = {}) {
  require(omega.bound_to(graph), "project_flow: edge flow is not bound to this graph");
  const Vec b = weighted_divergence(graph, omega.values);
  auto sol = solve_poisson(graph, b, {opts.tol, opts.max_iter});
  return assemble_projection(graph, omega, std::move(sol.phi), sol.residual, sol.iterations, opts.eps);
}

inline double nonpot_ratio(const ProjectionResult& result) { return result.nonpot; }

/// Signed sum of omega along a closed node sequence (first == last).
inline double cycle_circulation(const SampleGraph& graph, const EdgeFlow& omega, std::span<const Index> cycle) {
  require(omega.bound_to(graph), "cycle_circulation: edge flow is not bound to this graph");
  require(cycle.size() >= 2 && cycle.front() == cycle.back(), "cycle_circulation: cycle must return to its start");
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < cycle.size(); ++t) {
    const Index a = cycle[t];
    const Index b = cycle[t + 1];
    require(a >= 0 && a < graph.num_nodes() && b >= 0 && b < graph.num_nodes(), "cycle_circulation: node out of range");
    const auto e = graph.find_edge(a, b);
    if (!e) throw Error("cycle_circulation: no edge between " + std::to_string(a) + " and " + std::to_string(b));
    const double v = omega.values[*e];
    total += graph.edges()[static_cast<std::size_t>(*e)].i == a ? v : -v;
  }
  return total;
}

namespace detail {

/// Ridge least squares h = (X^T W X + lambda I)^{-1} X^T W y, then M^{-1} h.
inline Vec ridge_direction(const Mat& X, const Vec& y, const Vec& w, const Metric& metric, double ridge) {
  const Index d = X.cols();
  if (X.rows() == 0) return Vec::Zero(d);
  Mat normal = X.transpose() * w.asDiagonal() * X;
  normal.diagonal().array() += ridge;
  const Vec rhs = X.transpose() * w.cwiseProduct(y);
  Eigen::LLT<Mat> llt(normal);
  Vec h;
  if (llt.info() == Eigen::Success) {
    h = llt.solve(rhs);
  } else {
    // ridge = 0 with rank-deficient neighbors
    h = normal.completeOrthogonalDecomposition().solve(rhs);
  }
  return metric.solve(h);
}

}  // namespace detail

/// Lifts the node potential to a direction at `node` from its graph
/// neighborhood (weighted ridge least squares on edge differences).
inline Vec lift_node_direction(const SampleGraph& graph, const NodePotential& phi, Index node, const Metric& metric,
                               double ridge = 1e-4) {
  require(node >= 0 && node < graph.num_nodes(), "lift_node_direction: node out of range");
  require_dim(phi.values.size() == graph.num_nodes(), "lift_node_direction: potential length mismatch");
  require(ridge >= 0.0, "lift_node_direction: ridge must be nonnegative");
  const auto nbrs = graph.incident(node);
  const Index d = graph.dim();
  Mat X(static_cast<Index>(nbrs.size()), d);
  Vec y(X.rows());
  Vec w(X.rows());
  const Vec xi = graph.position(node);
  for (std::size_t r = 0; r < nbrs.size(); ++r) {
    const auto& inc = nbrs[r];
    const auto row = static_cast<Index>(r);
    X.row(row) = (graph.position(inc.neighbor) - xi).transpose();
    y[row] = phi.values[inc.neighbor] - phi.values[node];
    w[row] = graph.weights()[static_cast<std::size_t>(inc.edge)];
  }
  return detail::ridge_direction(X, y, w, metric, ridge);
}

/// Directions at every node, one per row.
inline PointMat lift_all_nodes(const SampleGraph& graph, const NodePotential& phi, const Metric& metric,
                               double ridge = 1e-4) {
  PointMat out(graph.num_nodes(), graph.dim());
  for (Index i = 0; i < graph.num_nodes(); ++i) out.row(i) = lift_node_direction(graph, phi, i, metric, ridge).transpose();
  return out;
}

/// Direction at an arbitrary query point from its k_query nearest nodes.
///
/// The potential at the query is unknown, so differences are taken against
/// the neighbor mean. A query that coincides with a node is anchored at that
/// node instead, which reproduces the node lift on the same neighbor set.
inline Vec lift_query_direction(const SampleGraph& graph, const NodePotential& phi, const Vec& query, Index k_query,
                                const Metric& metric, double ridge = 1e-4) {
  const Index d = graph.dim();
  require_dim(query.size() == d, "lift_query_direction: query dimension mismatch");
  require_dim(phi.values.size() == graph.num_nodes(), "lift_query_direction: potential length mismatch");
  require(k_query >= 1, "lift_query_direction: k_query must be positive");
  if (graph.num_nodes() < 2) return Vec::Zero(d);

  const PointMat whitened = detail::whiten_points(graph.positions(), metric);
  const Vec wq = metric.whiten(query);
  const auto nbrs = nearest_nodes(whitened, wq, k_query);
  const double scale = std::max(1.0, wq.norm());
  const bool anchored = (whitened.row(nbrs.front()).transpose() - wq).norm() <= 1e-12 * scale;

  Vec center_x;
  double center_phi = 0.0;
  std::size_t first = 0;
  if (anchored) {
    center_x = graph.position(nbrs.front());
    center_phi = phi.values[nbrs.front()];
    first = 1;
  } else {
    center_x = Vec::Zero(d);
    for (Index j : nbrs) {
      center_x += graph.position(j);
      center_phi += phi.values[j];
    }
    center_x /= static_cast<double>(nbrs.size());
    center_phi /= static_cast<double>(nbrs.size());
  }
  const auto rows = static_cast<Index>(nbrs.size() - first);
  Mat X(rows, d);
  Vec y(rows);
  for (Index r = 0; r < rows; ++r) {
    const Index j = nbrs[first + static_cast<std::size_t>(r)];
    X.row(r) = (graph.position(j) - center_x).transpose();
    y[r] = phi.values[j] - center_phi;
  }
  return detail::ridge_direction(X, y, Vec::Ones(rows), metric, ridge);
}

}  // namespace hodgeflow
