#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hodgeflow/common.hpp"
#include "hodgeflow/metric.hpp"

namespace hodgeflow {

/// Oriented edge i -> j, always stored with i < j.
struct Edge {
  Index i = 0;
  Index j = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// One entry of a node's incidence list. `sign` is +1 when the edge points
/// into the node (the node is the head j) and -1 when it leaves (tail i).
struct Incidence {
  Index neighbor = 0;
  Index edge = 0;
  int sign = 0;
};

struct WeightScheme {
  enum class Kind { Uniform, Gaussian };
  Kind kind = Kind::Uniform;
  /// Gaussian bandwidth; empty means Auto (median retained edge distance).
  std::optional<double> sigma;

  static WeightScheme uniform() { return {}; }
  static WeightScheme gaussian(std::optional<double> sigma = std::nullopt) {
    return {Kind::Gaussian, sigma};
  }
};

namespace detail {
inline std::uint64_t next_graph_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

struct UnionFind {
  std::vector<Index> parent;
  explicit UnionFind(Index n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), Index{0});
  }
  Index find(Index x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};
}  // namespace detail

/// Weighted undirected sample graph with a canonical orientation.
///
/// The incidence operator B (edge e = i->j maps phi to phi_j - phi_i) is
/// never materialized; it acts through the edge list and the per-node
/// incidence lists built at construction.
class SampleGraph {
 public:
  /// Builds a graph from an explicit edge list. Edges may be given in either
  /// orientation; they are normalized to i < j. Duplicates and self-loops are
  /// rejected.
  static SampleGraph from_edges(PointMat positions, std::vector<std::pair<Index, Index>> pairs,
                                std::vector<double> weights = {}, Index k = 0) {
    const Index n = positions.rows();
    require(n >= 1, "SampleGraph: need at least one node");
    require(positions.allFinite(), "SampleGraph: non-finite coordinates");
    if (weights.empty()) weights.assign(pairs.size(), 1.0);
    require_dim(weights.size() == pairs.size(), "SampleGraph: weight count differs from edge count");

    std::vector<std::pair<Edge, double>> tagged;
    tagged.reserve(pairs.size());
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      auto [a, b] = pairs[e];
      require(a >= 0 && b >= 0 && a < n && b < n, "SampleGraph: edge endpoint out of range");
      require(a != b, "SampleGraph: self-loop");
      require(weights[e] > 0.0 && std::isfinite(weights[e]), "SampleGraph: weights must be positive and finite");
      tagged.push_back({Edge{std::min(a, b), std::max(a, b)}, weights[e]});
    }
    std::sort(tagged.begin(), tagged.end(), [](const auto& x, const auto& y) {
      return std::pair(x.first.i, x.first.j) < std::pair(y.first.i, y.first.j);
    });
    for (std::size_t e = 1; e < tagged.size(); ++e) {
      require(!(tagged[e].first == tagged[e - 1].first), "SampleGraph: duplicate edge");
    }

    SampleGraph g;
    g.positions_ = std::move(positions);
    g.k_ = k;
    g.edges_.reserve(tagged.size());
    g.weights_.reserve(tagged.size());
    for (auto& [edge, w] : tagged) {
      g.edges_.push_back(edge);
      g.weights_.push_back(w);
    }
    g.finalize();
    return g;
  }

  Index num_nodes() const { return positions_.rows(); }
  Index num_edges() const { return static_cast<Index>(edges_.size()); }
  Index dim() const { return positions_.cols(); }
  Index k() const { return k_; }
  std::uint64_t id() const { return id_; }

  const PointMat& positions() const { return positions_; }
  Vec position(Index i) const { return positions_.row(i).transpose(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<double>& weights() const { return weights_; }
  std::span<const Incidence> incident(Index node) const { return adjacency_[node]; }
  Index degree(Index node) const { return static_cast<Index>(adjacency_[node].size()); }

  const std::vector<Index>& components() const { return components_; }
  Index num_components() const { return num_components_; }
  const std::vector<Index>& component_sizes() const { return component_sizes_; }

  /// Weighted degree sum_j w_ij (the Laplacian diagonal).
  const Vec& weighted_degree() const { return wdeg_; }

  /// Edge index joining a and b, if any.
  std::optional<Index> find_edge(Index a, Index b) const {
    for (const auto& inc : adjacency_[a]) {
      if (inc.neighbor == b) return inc.edge;
    }
    return std::nullopt;
  }

  /// Removes each component's mean from v in place.
  void center_per_component(Vec& v) const {
    Vec sums = Vec::Zero(num_components_);
    for (Index i = 0; i < num_nodes(); ++i) sums[components_[i]] += v[i];
    for (Index c = 0; c < num_components_; ++c) sums[c] /= static_cast<double>(component_sizes_[c]);
    for (Index i = 0; i < num_nodes(); ++i) v[i] -= sums[components_[i]];
  }

  Vec component_means(const Vec& v) const {
    Vec sums = Vec::Zero(num_components_);
    for (Index i = 0; i < num_nodes(); ++i) sums[components_[i]] += v[i];
    for (Index c = 0; c < num_components_; ++c) sums[c] /= static_cast<double>(component_sizes_[c]);
    return sums;
  }

 private:
  SampleGraph() = default;

  void finalize() {
    id_ = detail::next_graph_id();
    const Index n = num_nodes();
    adjacency_.assign(static_cast<std::size_t>(n), {});
    wdeg_ = Vec::Zero(n);
    detail::UnionFind uf(n);
    for (Index e = 0; e < num_edges(); ++e) {
      const auto [i, j] = edges_[e];
      adjacency_[i].push_back({j, e, -1});
      adjacency_[j].push_back({i, e, +1});
      wdeg_[i] += weights_[e];
      wdeg_[j] += weights_[e];
      uf.unite(i, j);
    }
    components_.assign(static_cast<std::size_t>(n), -1);
    std::vector<Index> root_label(static_cast<std::size_t>(n), -1);
    num_components_ = 0;
    for (Index i = 0; i < n; ++i) {
      const Index r = uf.find(i);
      if (root_label[r] < 0) root_label[r] = num_components_++;
      components_[i] = root_label[r];
    }
    component_sizes_.assign(static_cast<std::size_t>(num_components_), 0);
    for (Index i = 0; i < n; ++i) ++component_sizes_[components_[i]];
  }

  PointMat positions_;
  std::vector<Edge> edges_;
  std::vector<double> weights_;
  std::vector<std::vector<Incidence>> adjacency_;
  std::vector<Index> components_;
  std::vector<Index> component_sizes_;
  Index num_components_ = 0;
  Index k_ = 0;
  Vec wdeg_;
  std::uint64_t id_ = 0;
};

/// Node potential with the per-component zero-mean gauge applied.
struct NodePotential {
  Vec values;
  /// Per-component means of `values` after gauge fixing (zero to round-off).
  Vec gauge;
};

/// Solver non-convergence. Carries the final iterate so callers can inspect
/// or deliberately use an unconverged potential.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, int iterations, NodePotential partial)
      : Error(what), residual_(residual), iterations_(iterations), partial_(std::move(partial)) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }
  const NodePotential& partial() const { return partial_; }

 private:
  double residual_;
  int iterations_;
  NodePotential partial_;
};

struct PoissonSolution {
  NodePotential phi;
  /// ||L phi - rhs'||_2 at return.
  double residual = 0.0;
  int iterations = 0;
};

/// Pairwise squared distances in whitened coordinates, row i to all j.
namespace detail {
inline PointMat whiten_points(const PointMat& points, const Metric& metric) {
  if (metric.is_identity()) return points;
  return points * (*metric.chol());
}
}  // namespace detail

/// Indices of the k nearest nodes to `query` under Dist_M (ties broken by
/// index). `exclude` skips one node (the query itself for in-graph queries).
inline std::vector<Index> nearest_nodes(const PointMat& whitened, const Vec& whitened_query, Index k,
                                        std::optional<Index> exclude = std::nullopt) {
  const Index n = whitened.rows();
  std::vector<std::pair<double, Index>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    if (exclude && *exclude == j) continue;
    cand.emplace_back((whitened.row(j).transpose() - whitened_query).squaredNorm(), j);
  }
  const auto kk = static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(cand.size())));
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
  std::vector<Index> out(kk);
  for (std::size_t t = 0; t < kk; ++t) out[t] = cand[t].second;
  return out;
}

/// Symmetrized k-NN graph under Dist_M(x,y) = sqrt((x-y)^T M (x-y)).
inline SampleGraph build_knn_graph(const PointMat& points, Index k, const Metric& metric,
                                   WeightScheme scheme = WeightScheme::uniform()) {
  const Index n = points.rows();
  require(n >= 2, "build_knn_graph: need at least two points");
  require(k >= 1 && k <= n - 1, "build_knn_graph: k must satisfy 1 <= k <= N-1");
  require(points.allFinite(), "build_knn_graph: non-finite coordinates");
  require_dim(points.cols() == metric.dim(), "build_knn_graph: metric dimension mismatch");

  const PointMat y = detail::whiten_points(points, metric);
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(n * k));
  for (Index i = 0; i < n; ++i) {
    for (Index j : nearest_nodes(y, y.row(i).transpose(), k, i)) pairs.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<double> dist(pairs.size());
  for (std::size_t e = 0; e < pairs.size(); ++e) dist[e] = (y.row(pairs[e].first) - y.row(pairs[e].second)).norm();

  std::vector<double> weights(pairs.size(), 1.0);
  if (scheme.kind == WeightScheme::Kind::Gaussian) {
    double sigma = 0.0;
    if (scheme.sigma) {
      sigma = *scheme.sigma;
      require(sigma > 0.0 && std::isfinite(sigma), "build_knn_graph: sigma must be positive");
    } else {
      std::vector<double> sorted = dist;
      const auto mid = sorted.size() / 2;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
      sigma = sorted[mid];
      if (sorted.size() % 2 == 0) {
        const double lower = *std::max_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid));
        sigma = 0.5 * (sigma + lower);
      }
      if (!(sigma > 0.0)) {
        // all-duplicate neighborhoods: fall back to the smallest positive gap
        double smallest = std::numeric_limits<double>::infinity();
        for (double d : dist) {
          if (d > 0.0) smallest = std::min(smallest, d);
        }
        sigma = std::isfinite(smallest) ? smallest : 1.0;
      }
    }
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      const double r = dist[e] / sigma;
      weights[e] = std::max(std::exp(-r * r), std::numeric_limits<double>::min());
    }
  }
  return SampleGraph::from_edges(points, std::move(pairs), std::move(weights), k);
}

/// (L phi)_i = sum_{j~i} w_ij (phi_i - phi_j), one pass over the edges.
inline Vec laplacian_apply(const SampleGraph& graph, const Vec& phi) {
  require_dim(phi.size() == graph.num_nodes(), "laplacian_apply: length mismatch");
  Vec out = Vec::Zero(phi.size());
  const auto& edges = graph.edges();
  const auto& w = graph.weights();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double flow = w[e] * (phi[edges[e].i] - phi[edges[e].j]);
    out[edges[e].i] += flow;
    out[edges[e].j] -= flow;
  }
  return out;
}

struct PoissonOptions {
  double tol = 1e-10;
  /// 0 selects the default 10 * N.
  int max_iter = 0;
};

/// Jacobi-preconditioned CG on L phi = rhs', rhs' = rhs minus its
/// per-component mean. The iterate is kept in the zero-mean gauge.
inline PoissonSolution solve_poisson(const SampleGraph& graph, const Vec& rhs, PoissonOptions opts = {}) {
  const Index n = graph.num_nodes();
  require_dim(rhs.size() == n, "solve_poisson: rhs length mismatch");
  const int max_iter = opts.max_iter > 0 ? opts.max_iter : static_cast<int>(10 * n);

  Vec b = rhs;
  graph.center_per_component(b);
  const double threshold = opts.tol * std::max(1.0, b.norm());

  Vec inv_diag(n);
  for (Index i = 0; i < n; ++i) {
    const double d = graph.weighted_degree()[i];
    inv_diag[i] = d > 0.0 ? 1.0 / d : 0.0;
  }
  auto precondition = [&](const Vec& r) {
    Vec z = inv_diag.cwiseProduct(r);
    graph.center_per_component(z);
    return z;
  };

  Vec x = Vec::Zero(n);
  Vec r = b;
  double rnorm = r.norm();
  int it = 0;
  if (rnorm > threshold) {
    Vec z = precondition(r);
    Vec p = z;
    double rz = r.dot(z);
    while (it < max_iter) {
      ++it;
      const Vec ap = laplacian_apply(graph, p);
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) break;
      const double alpha = rz / pap;
      x += alpha * p;
      graph.center_per_component(x);
      r -= alpha * ap;
      rnorm = r.norm();
      if (rnorm <= threshold) {
        // confirm against the true residual before accepting
        r = b - laplacian_apply(graph, x);
        rnorm = r.norm();
        if (rnorm <= threshold) break;
      }
      z = precondition(r);
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
    rnorm = (b - laplacian_apply(graph, x)).norm();
  }

  NodePotential phi{x, graph.component_means(x)};
  if (rnorm > threshold) {
    throw SolverError("solve_poisson: no convergence after " + std::to_string(it) +
                          " iterations (residual " + std::to_string(rnorm) + ")",
                      rnorm, it, std::move(phi));
  }
  return {std::move(phi), rnorm, it};
}

}  // namespace hodgeflow
