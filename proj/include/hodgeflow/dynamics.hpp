#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "hodgeflow/common.hpp"
#include "hodgeflow/domain.hpp"
#include "hodgeflow/fields.hpp"
#include "hodgeflow/graph.hpp"
#include "hodgeflow/metric.hpp"
#include "hodgeflow/neural.hpp"
#include "hodgeflow/projection.hpp"

namespace hodgeflow {

using FieldFn = std::function<Vec(const Vec&)>;

enum class DynamicsMode { Raw, HPMLGraph, HPMLNeural, ExactPotentialAscent };
enum class EtaSchedule { Constant, InvSqrt };

/// Where the projection samples come from at each refresh.
enum class SampleSource {
  /// Fresh draw from the domain's sampling measure (uniform on boxes and a
  /// centered box for unbounded kinds, flat Dirichlet on simplices).
  Domain,
  /// Recent iterates plus Gaussian jitter around them.
  Jitter,
  /// Uniform in a ball of the domain's affine hull (isotropic around its
  /// center; default center is the domain center).
  Ball,
};

struct RunConfig {
  int steps = 2000;
  double eta = 0.05;
  EtaSchedule schedule = EtaSchedule::Constant;
  int refresh_rate = 8;
  Index buffer_size = 500;
  DynamicsMode mode = DynamicsMode::Raw;
  std::uint64_t seed = 0;

  double eta_at(int t) const {
    return schedule == EtaSchedule::Constant ? eta : eta / std::sqrt(static_cast<double>(t + 1));
  }
};

struct ProjParams {
  Index k = 8;
  /// 0 means "same as k".
  Index k_query = 0;
  WeightScheme weights = WeightScheme::uniform();
  std::optional<Metric> metric;
  double ridge = 1e-4;
  ProjectionOptions projection;

  SampleSource sampling = SampleSource::Domain;
  /// Center and half-width of the sampling box for unbounded domains
  /// (center defaults to the origin).
  std::optional<Vec> sample_center;
  double sample_half_width = 2.0;
  /// Ball sampling radius; defaults to the inradius for bounded domains and
  /// sample_half_width otherwise.
  std::optional<double> sample_radius;
  /// Ball sampling around the current iterate instead of a fixed center.
  bool sample_follow = false;
  /// Jitter sampling: recent-iterate window, sigma = scale * window diameter
  /// with a floor.
  Index jitter_window = 32;
  double jitter_scale = 0.25;
  double jitter_floor = 1e-2;

  NeuralProjConfig neural;
  /// Full passes over the first buffer before the neural run starts.
  int neural_warmup_epochs = 0;

  /// ExactPotentialAscent only: additive direction error with norm <= this.
  double direction_noise = 0.0;
};

struct StepDiagnostics {
  double field_norm = 0.0;
  double proj_norm = 0.0;
  /// NaN except at refresh steps of the HPML modes.
  double nonpot = std::numeric_limits<double>::quiet_NaN();
  /// NaN unless a reference potential is known.
  double phi = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  PointMat iterates;    // (T+1) x d
  PointMat directions;  // T x d, the direction g_t actually stepped along
  std::vector<StepDiagnostics> steps;
  std::vector<double> etas;
  std::vector<int> refresh_steps;
  /// Final potential network of an HPMLNeural run.
  std::optional<PotentialNet> net;
};

/// Snapshot handed to an observer after each graph projection.
struct RefreshView {
  int step = 0;
  const SampleGraph& graph;
  const ProjectionResult& result;
  const PointMat& field_values;
};
using RefreshObserver = std::function<void(const RefreshView&)>;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double lipschitz_constant(const Mat& Q, int max_iter = 200000, double tol = 1e-15) {
  require_dim(Q.rows() == Q.cols() && Q.rows() > 0, "lipschitz_constant: Q must be square");
  Vec v = Vec::Ones(Q.rows()) / std::sqrt(static_cast<double>(Q.rows()));
  // a fixed non-symmetric start avoids an exactly orthogonal initial vector
  for (Index i = 0; i < v.size(); ++i) v[i] += 1e-3 * static_cast<double>(i + 1);
  v.normalize();
  double lambda = v.dot(Q * v);
  for (int it = 0; it < max_iter; ++it) {
    Vec w = Q * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    const double next = v.dot(Q * v);
    if (std::abs(next - lambda) <= tol * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

namespace detail {

template <class Rng>
PointMat draw_buffer(const DomainSpec& domain, const ProjParams& params, Index size, const PointMat& iterates,
                     Index num_iterates, Rng& rng) {
  const Index d = domain.dim;
  PointMat buf(size, d);
  if (params.sampling == SampleSource::Domain) {
    const Vec center = params.sample_center ? *params.sample_center : Vec::Zero(d);
    require_dim(center.size() == d, "run_dynamics: sample_center dimension mismatch");
    for (Index r = 0; r < size; ++r) buf.row(r) = sample_domain(domain, rng, center, params.sample_half_width).transpose();
    return buf;
  }
  if (params.sampling == SampleSource::Ball) {
    const Vec center = params.sample_follow  ? Vec(iterates.row(num_iterates - 1).transpose())
                       : params.sample_center ? *params.sample_center
                                              : domain_center(domain);
    require_dim(center.size() == d, "run_dynamics: sample_center dimension mismatch");
    const double radius =
        params.sample_radius ? *params.sample_radius
                             : (domain.bounded() ? domain_inradius(domain) : params.sample_half_width);
    require(radius > 0.0, "run_dynamics: sample radius must be positive");
    for (Index r = 0; r < size; ++r) buf.row(r) = sample_tangent_ball(domain, rng, center, radius).transpose();
    return buf;
  }
  // recent distinct iterates, newest first
  std::vector<Vec> window;
  for (Index t = num_iterates - 1; t >= 0 && static_cast<Index>(window.size()) < params.jitter_window; --t) {
    const Vec x = iterates.row(t).transpose();
    bool dup = false;
    for (const auto& w : window) dup = dup || (w - x).norm() <= 1e-12 * std::max(1.0, x.norm());
    if (!dup) window.push_back(x);
  }
  double diam = 0.0;
  for (std::size_t a = 0; a < window.size(); ++a) {
    for (std::size_t b = a + 1; b < window.size(); ++b) diam = std::max(diam, (window[a] - window[b]).norm());
  }
  const double sigma = std::max(params.jitter_scale * diam, params.jitter_floor);
  std::normal_distribution<double> normal(0.0, sigma);
  std::uniform_int_distribution<std::size_t> pick(0, window.size() - 1);
  Index r = 0;
  for (; r < size && r < static_cast<Index>(window.size()); ++r) buf.row(r) = window[static_cast<std::size_t>(r)].transpose();
  for (; r < size; ++r) {
    Vec x = window[pick(rng)];
    for (Index i = 0; i < d; ++i) x[i] += normal(rng);
    buf.row(r) = retract(domain, x).transpose();
  }
  return buf;
}

}  // namespace detail

/// Runs raw or projected dynamics x_{t+1} = Retr(x_t + eta_t g_t).
///
/// `potential` is required for ExactPotentialAscent and, when present, is
/// evaluated along the trajectory for the step diagnostics.
inline Trajectory run_dynamics(const FieldFn& field, const DomainSpec& domain, const Vec& x0, const RunConfig& config,
                               const ProjParams& params = {},
                               const std::optional<field::QuadraticPotential>& potential = std::nullopt,
                               const RefreshObserver& observer = {}) {
  const Index d = domain.dim;
  require(config.steps >= 1, "run_dynamics: steps must be >= 1");
  require(config.refresh_rate >= 1, "run_dynamics: refresh_rate must be >= 1");
  require_dim(x0.size() == d, "run_dynamics: x0 dimension mismatch");
  require(domain.contains(x0), "run_dynamics: x0 is infeasible");
  const bool hpml = config.mode == DynamicsMode::HPMLGraph || config.mode == DynamicsMode::HPMLNeural;
  if (hpml) require(config.buffer_size >= params.k + 1, "run_dynamics: HPML modes need buffer_size >= k + 1");
  if (config.mode == DynamicsMode::ExactPotentialAscent) {
    require(potential.has_value(), "run_dynamics: ExactPotentialAscent needs a known potential");
    require_dim(potential->c.size() == d, "run_dynamics: potential dimension mismatch");
  }
  const Metric metric = params.metric ? *params.metric : Metric::identity(d);
  require_dim(metric.dim() == d, "run_dynamics: metric dimension mismatch");
  const Index k_query = params.k_query > 0 ? params.k_query : params.k;

  std::mt19937_64 rng(config.seed);
  std::optional<PotentialTrainer> trainer;
  if (config.mode == DynamicsMode::HPMLNeural) {
    NeuralProjConfig nc = params.neural;
    nc.seed = config.seed ^ 0x9e3779b97f4a7c15ULL;
    trainer.emplace(d, metric, nc);
  }

  Trajectory traj;
  traj.iterates.resize(config.steps + 1, d);
  traj.directions.resize(config.steps, d);
  traj.steps.reserve(static_cast<std::size_t>(config.steps));
  traj.iterates.row(0) = x0.transpose();

  std::optional<SampleGraph> graph;
  std::optional<NodePotential> phi;
  Vec x = x0;
  for (int t = 0; t < config.steps; ++t) {
    StepDiagnostics diag;
    const Vec F = field(x);
    diag.field_norm = F.norm();
    if (potential) diag.phi = potential->value(x);

    if (hpml && t % config.refresh_rate == 0) {
      const PointMat buf = detail::draw_buffer(domain, params, config.buffer_size, traj.iterates, t + 1, rng);
      PointMat vals(buf.rows(), d);
      for (Index r = 0; r < buf.rows(); ++r) vals.row(r) = field(buf.row(r).transpose()).transpose();
      if (config.mode == DynamicsMode::HPMLGraph) {
        graph.emplace(build_knn_graph(buf, params.k, metric, params.weights));
        const EdgeFlow omega = edge_flow(*graph, vals, metric);
        const ProjectionResult res = project_flow(*graph, omega, params.projection);
        diag.nonpot = res.nonpot;
        phi = res.phi;
        if (observer) observer(RefreshView{t, *graph, res, vals});
      } else {
        if (t == 0 && params.neural_warmup_epochs > 0) trainer->fit(buf, vals, params.neural_warmup_epochs);
        trainer->refresh(buf, vals);
      }
      traj.refresh_steps.push_back(t);
    }

    Vec g;
    switch (config.mode) {
      case DynamicsMode::Raw:
        g = F;
        break;
      case DynamicsMode::HPMLGraph:
        g = lift_query_direction(*graph, *phi, x, k_query, metric, params.ridge);
        break;
      case DynamicsMode::HPMLNeural:
        g = net_grad_x(trainer->net(), metric, x);
        break;
      case DynamicsMode::ExactPotentialAscent:
        g = potential->gradient(x);
        if (params.direction_noise > 0.0) {
          std::normal_distribution<double> normal(0.0, 1.0);
          std::uniform_real_distribution<double> unif(0.0, 1.0);
          Vec u(d);
          for (Index i = 0; i < d; ++i) u[i] = normal(rng);
          g += params.direction_noise * unif(rng) * u / u.norm();
        }
        break;
    }
    diag.proj_norm = g.norm();
    const double eta = config.eta_at(t);
    x = retract(domain, x + eta * g);
    traj.iterates.row(t + 1) = x.transpose();
    traj.directions.row(t) = g.transpose();
    traj.etas.push_back(eta);
    traj.steps.push_back(diag);
  }
  if (trainer) traj.net = trainer->net();
  return traj;
}

inline Trajectory run_dynamics(const FieldSpec& spec, const DomainSpec& domain, const Vec& x0, const RunConfig& config,
                               const ProjParams& params = {}, const RefreshObserver& observer = {}) {
  require_dim(spec.dim() == domain.dim, "run_dynamics: field and domain dimensions differ");
  // retracted buffer points may miss the simplex by rounding
  FieldFn fn = [&spec](const Vec& x) { return detail::eval_unchecked(spec, x); };
  return run_dynamics(fn, domain, x0, config, params, spec.reference_potential(), observer);
}

/// Max pairwise distance among the last `window` iterates.
inline double orbit_diameter(const PointMat& iterates, Index window) {
  require(window >= 1 && window <= iterates.rows(), "orbit_diameter: window out of range");
  const Index start = iterates.rows() - window;
  double best = 0.0;
  for (Index a = start; a < iterates.rows(); ++a) {
    for (Index b = a + 1; b < iterates.rows(); ++b) best = std::max(best, (iterates.row(a) - iterates.row(b)).norm());
  }
  return best;
}
inline double orbit_diameter(const Trajectory& traj, Index window) { return orbit_diameter(traj.iterates, window); }

inline double path_length(const PointMat& iterates) {
  double total = 0.0;
  for (Index t = 0; t + 1 < iterates.rows(); ++t) total += (iterates.row(t + 1) - iterates.row(t)).norm();
  return total;
}
inline double path_length(const Trajectory& traj) { return path_length(traj.iterates); }

/// Classical RK4 for dx/dt = f(x); returns all states (steps + 1 rows).
inline PointMat rk4_integrate(const FieldFn& f, const Vec& x0, double dt, int steps) {
  PointMat out(steps + 1, x0.size());
  Vec x = x0;
  out.row(0) = x.transpose();
  for (int s = 0; s < steps; ++s) {
    const Vec k1 = f(x);
    const Vec k2 = f(x + 0.5 * dt * k1);
    const Vec k3 = f(x + 0.5 * dt * k2);
    const Vec k4 = f(x + dt * k3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out.row(s + 1) = x.transpose();
  }
  return out;
}

}  // namespace hodgeflow
