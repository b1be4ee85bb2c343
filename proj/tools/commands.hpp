#pragma once

// Subcommand implementations for the hodgeflow CLI. Kept in a header so the
// test suite can drive them without spawning processes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "hodgeflow/ctde.hpp"
#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/dynamics.hpp"
#include "hodgeflow/fields.hpp"
#include "hodgeflow/io.hpp"
#include "hodgeflow/neural.hpp"
#include "hodgeflow/projection.hpp"
#include "svg.hpp"

#ifndef HODGEFLOW_SCHEMA_DIR
#define HODGEFLOW_SCHEMA_DIR "docs"
#endif

namespace hodgeflow::cli {

namespace fs = std::filesystem;
using io::Json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Options {
  fs::path config;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  /// 0 = automatic.
  int threads = 0;
};

// ------------------------------------------------------------ schemas

inline fs::path schema_dir() {
  if (const char* env = std::getenv("HODGEFLOW_SCHEMA_DIR"); env && *env) return env;
  return HODGEFLOW_SCHEMA_DIR;
}

inline Json load_schema(const std::string& name) { return io::read_json(schema_dir() / (name + ".schema.json")); }

inline void check_schema(const Json& doc, const std::string& schema, const std::string& what) {
  const auto errors = io::validate(doc, load_schema(schema));
  if (errors.empty()) return;
  std::string msg = what + " violates " + schema + " schema:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

/// Every emitted document is checked against its published schema.
inline void emit_json(const fs::path& path, const Json& doc, const std::string& schema) {
  check_schema(doc, schema, path.filename().string());
  io::write_json(path, doc);
}

// ------------------------------------------------------------- config

struct Experiment {
  std::string kind;
  Json cfg;
  fs::path base_dir;

  bool is_mechanism() const { return kind.starts_with("mechanism-"); }
  bool has(const char* key) const { return cfg.contains(key); }
  const Json& at(const char* key) const { return cfg.at(key); }

  template <class T>
  T get(const Json& obj, const char* key, T fallback) const {
    return obj.contains(key) ? obj.at(key).get<T>() : fallback;
  }
  Json section(const char* key) const { return cfg.contains(key) ? cfg.at(key) : Json::object(); }
  fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; }
};

inline const std::set<std::string>& allowed_keys(const std::string& kind) {
  static const std::map<std::string, std::set<std::string>> table = [] {
    const std::set<std::string> mech{"experiment", "output_dir", "seeds", "modes", "x0",    "window",
                                     "field",      "domain",     "run",   "projection", "neural"};
    std::map<std::string, std::set<std::string>> t;
    t["mechanism-2d"] = mech;
    t["mechanism-logistic"] = mech;
    t["mechanism-3d"] = mech;
    auto rps = mech;
    rps.erase("domain");
    t["mechanism-rps"] = rps;
    t["project"] = {"experiment", "output_dir", "input", "metric_file", "projection"};
    t["ctde"] = {"experiment", "output_dir", "seeds",  "modes",      "game",  "init_logits",
                 "init_scale", "target_prob", "window", "run",       "projection", "neural"};
    t["diagnose"] = {"experiment", "output_dir", "seeds", "diagnose"};
    return t;
  }();
  return table.at(kind);
}

inline Experiment load_experiment(const fs::path& path) {
  Experiment e;
  e.cfg = io::read_json(path);
  check_schema(e.cfg, "config", path.string());
  e.kind = e.cfg.at("experiment").get<std::string>();
  e.base_dir = path.parent_path();
  const auto& allowed = allowed_keys(e.kind);
  for (const auto& [key, _] : e.cfg.items()) {
    if (!allowed.contains(key)) throw ConfigError(path.string() + ": key '" + key + "' does not apply to " + e.kind);
  }
  return e;
}

inline fs::path output_dir(const Experiment& e, const Options& opt) {
  fs::path dir = opt.out ? *opt.out : fs::path(e.cfg.value("output_dir", std::string("hodgeflow-out")));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io::IoError("cannot create output directory " + dir.string());
  return dir;
}

inline std::vector<std::uint64_t> seeds_of(const Experiment& e, const Options& opt) {
  if (opt.seed) return {*opt.seed};
  if (!e.has("seeds")) return {0};
  std::vector<std::uint64_t> out;
  for (const auto& s : e.at("seeds")) out.push_back(s.get<std::uint64_t>());
  return out;
}

/// HODGEFLOW_THREADS overrides --threads; 0 picks one thread per job up to
/// the hardware count.
inline int thread_count(const Options& opt, std::size_t jobs) {
  int n = opt.threads;
  if (const char* env = std::getenv("HODGEFLOW_THREADS"); env && *env) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("HODGEFLOW_THREADS must be an integer");
    }
  }
  if (n < 0) throw ConfigError("thread count must be nonnegative");
  if (n == 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min<int>(n, static_cast<int>(jobs)));
}

/// Runs job(i) for i in [0, count) on `threads` workers; the first exception
/// is rethrown after all workers stop.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

inline DynamicsMode parse_mode(const std::string& s) {
  if (s == "raw") return DynamicsMode::Raw;
  if (s == "hpml_graph") return DynamicsMode::HPMLGraph;
  if (s == "hpml_neural") return DynamicsMode::HPMLNeural;
  throw ConfigError("unknown mode '" + s + "'");
}

inline std::vector<std::string> modes_of(const Experiment& e) {
  if (!e.has("modes")) return {"raw", "hpml_graph"};
  std::vector<std::string> out;
  for (const auto& m : e.at("modes")) {
    const auto s = m.get<std::string>();
    if (std::find(out.begin(), out.end(), s) != out.end()) throw ConfigError("duplicate mode '" + s + "'");
    out.push_back(s);
  }
  return out;
}

inline RunConfig run_config_of(const Experiment& e) {
  const Json r = e.section("run");
  RunConfig rc;
  rc.steps = e.get(r, "steps", rc.steps);
  rc.eta = e.get(r, "eta", rc.eta);
  rc.schedule = e.get<std::string>(r, "schedule", "constant") == "inv_sqrt" ? EtaSchedule::InvSqrt : EtaSchedule::Constant;
  rc.refresh_rate = e.get(r, "refresh_rate", rc.refresh_rate);
  rc.buffer_size = e.get<Index>(r, "buffer_size", rc.buffer_size);
  return rc;
}

inline Mat matrix_of(const Json& j, const std::string& what) {
  try {
    return io::mat_from_json(j, what);
  } catch (const io::IoError& err) {
    throw ConfigError(err.what());
  }
}

inline Vec vector_of(const Json& j, const std::string& what) {
  try {
    return io::vec_from_json(j, what);
  } catch (const io::IoError& err) {
    throw ConfigError(err.what());
  }
}

inline WeightScheme weights_of(const Experiment& e, const Json& p) {
  if (!p.contains("weights")) return WeightScheme::uniform();
  const auto& w = p.at("weights");
  if (w.at("kind").get<std::string>() == "uniform") {
    if (w.contains("sigma")) throw ConfigError("projection.weights: sigma only applies to gaussian weights");
    return WeightScheme::uniform();
  }
  return w.contains("sigma") ? WeightScheme::gaussian(w.at("sigma").get<double>()) : WeightScheme::gaussian();
  (void)e;
}

inline std::optional<Metric> metric_of(const Json& p, Index d) {
  if (!p.contains("metric")) return std::nullopt;
  const Mat m = matrix_of(p.at("metric"), "projection.metric");
  if (m.rows() != d || m.cols() != d) throw ConfigError("projection.metric must be " + std::to_string(d) + "x" + std::to_string(d));
  return Metric::spd(m);
}

inline ProjParams proj_params_of(const Experiment& e, Index d) {
  const Json p = e.section("projection");
  ProjParams pp;
  pp.k = e.get<Index>(p, "k", pp.k);
  pp.k_query = e.get<Index>(p, "k_query", pp.k_query);
  pp.weights = weights_of(e, p);
  pp.metric = metric_of(p, d);
  pp.ridge = e.get(p, "ridge", pp.ridge);
  pp.projection.tol = e.get(p, "solver_tol", pp.projection.tol);
  pp.projection.max_iter = e.get(p, "solver_max_iter", pp.projection.max_iter);
  if (p.contains("sampling")) {
    const auto& s = p.at("sampling");
    const auto src = e.get<std::string>(s, "source", "domain");
    pp.sampling = src == "ball" ? SampleSource::Ball : src == "jitter" ? SampleSource::Jitter : SampleSource::Domain;
    if (s.contains("center")) {
      pp.sample_center = vector_of(s.at("center"), "sampling.center");
      if (pp.sample_center->size() != d) throw ConfigError("sampling.center must have length " + std::to_string(d));
    }
    if (s.contains("radius")) pp.sample_radius = s.at("radius").get<double>();
    pp.sample_half_width = e.get(s, "half_width", pp.sample_half_width);
    pp.sample_follow = e.get(s, "follow", pp.sample_follow);
    pp.jitter_window = e.get<Index>(s, "jitter_window", pp.jitter_window);
    pp.jitter_scale = e.get(s, "jitter_scale", pp.jitter_scale);
    pp.jitter_floor = e.get(s, "jitter_floor", pp.jitter_floor);
  }
  const Json n = e.section("neural");
  pp.neural.width = e.get<Index>(n, "width", pp.neural.width);
  pp.neural.lr = e.get(n, "lr", pp.neural.lr);
  pp.neural.inner_steps = e.get(n, "inner_steps", pp.neural.inner_steps);
  pp.neural.lambda_gauge = e.get(n, "lambda_gauge", pp.neural.lambda_gauge);
  pp.neural.lambda_wd = e.get(n, "lambda_wd", pp.neural.lambda_wd);
  pp.neural.batch = e.get<Index>(n, "batch", pp.neural.batch);
  pp.neural.epochs = e.get(n, "epochs", pp.neural.epochs);
  pp.neural.momentum = e.get(n, "momentum", pp.neural.momentum);
  pp.neural_warmup_epochs = e.get(n, "warmup_epochs", pp.neural_warmup_epochs);
  return pp;
}

// ------------------------------------------------------ mechanism setup

enum class PlotKind { Plane, Logistic, SimplexPair, Oblique };

struct Mechanism {
  FieldSpec spec;
  DomainSpec domain;
  Vec x0;
  PlotKind plot;
};

inline DomainSpec domain_of(const Experiment& e, Index d) {
  if (!e.has("domain")) return DomainSpec::unconstrained(d);
  const auto& j = e.at("domain");
  if (j.at("kind").get<std::string>() == "unconstrained") {
    if (j.contains("lo") || j.contains("hi")) throw ConfigError("domain: lo/hi only apply to a box");
    return DomainSpec::unconstrained(d);
  }
  const double lo = e.get(j, "lo", -1.0);
  const double hi = e.get(j, "hi", 1.0);
  if (!(lo < hi)) throw ConfigError("domain: box requires lo < hi");
  return DomainSpec::box(d, lo, hi);
}

inline Mechanism mechanism_of(const Experiment& e) {
  const Json f = e.section("field");
  auto forbid = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
      if (f.contains(k)) throw ConfigError(std::string("field.") + k + " does not apply to " + e.kind);
    }
  };
  std::optional<FieldSpec> spec;
  Vec x0_default;
  PlotKind plot = PlotKind::Plane;
  std::optional<DomainSpec> domain;
  if (e.kind == "mechanism-rps") {
    forbid({"rho", "damping", "S", "A", "B"});
    field::Rps rps;
    if (f.contains("payoff")) rps.payoff = matrix_of(f.at("payoff"), "field.payoff");
    spec = FieldSpec::rps(rps);
    domain = DomainSpec::simplex_product({3, 3});
    x0_default = (Vec(6) << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6).finished();
    plot = PlotKind::SimplexPair;
  } else if (e.kind == "mechanism-2d") {
    forbid({"S", "A", "B", "payoff"});
    spec = FieldSpec::bilinear_skew_2d(e.get(f, "rho", 1.0), e.get(f, "damping", 1.0));
    x0_default = (Vec(2) << 1.0, 0.5).finished();
  } else if (e.kind == "mechanism-logistic") {
    forbid({"rho", "damping", "S", "payoff"});
    field::Logistic2x2 g;
    for (const char* key : {"A", "B"}) {
      if (!f.contains(key)) continue;
      const Mat t = matrix_of(f.at(key), std::string("field.") + key);
      if (t.rows() != 2 || t.cols() != 2) throw ConfigError(std::string("field.") + key + " must be 2x2");
      (key[0] == 'A' ? g.A : g.B) = t;
    }
    spec = FieldSpec::logistic_2x2(g);
    x0_default = (Vec(2) << 0.5, -0.3).finished();
    plot = PlotKind::Logistic;
  } else {
    forbid({"damping", "A", "B", "payoff"});
    Eigen::Matrix3d S;
    S << 0, 1, 0, -1, 0, 0, 0, 0, 0;
    if (f.contains("S")) {
      const Mat m = matrix_of(f.at("S"), "field.S");
      if (m.rows() != 3 || m.cols() != 3) throw ConfigError("field.S must be 3x3");
      S = m;
    }
    spec = FieldSpec::linear_3d(e.get(f, "rho", 0.5), S);
    x0_default = (Vec(3) << 1.5, -1.0, 0.8).finished();
    plot = PlotKind::Oblique;
  }
  if (!domain) domain = domain_of(e, spec->dim());
  const Vec x0 = e.has("x0") ? vector_of(e.at("x0"), "x0") : x0_default;
  if (x0.size() != spec->dim()) throw ConfigError("x0 must have length " + std::to_string(spec->dim()));
  if (!domain->contains(x0)) throw ConfigError("x0 is not in the domain");
  return {*spec, *domain, x0, plot};
}

/// Potential part of the field, when it is known in closed form
/// (Euclidean geometry only).
inline std::optional<std::function<Vec(const Vec&)>> potential_direction(const FieldSpec& spec) {
  if (auto* l = spec.as<field::Linear3D>()) {
    (void)l;
    return [](const Vec& x) { return Vec(-x); };
  }
  if (auto* b = spec.as<field::BilinearSkew2D>()) {
    const double damping = b->damping;
    if (damping == 0.0) return std::nullopt;
    return [damping](const Vec& x) { return Vec(-damping * x); };
  }
  if (auto pot = spec.reference_potential()) {
    return [p = *pot](const Vec& x) { return p.gradient(x); };
  }
  return std::nullopt;
}

inline std::pair<double, double> plot_point(PlotKind kind, const Vec& x, int panel) {
  switch (kind) {
    case PlotKind::Plane:
      return {x[0], x[1]};
    case PlotKind::Logistic:
      return {sigmoid(x[0]), sigmoid(x[1])};
    case PlotKind::SimplexPair: {
      const auto s = x.segment(3 * panel, 3);
      return svg::barycentric(s[0], s[1], s[2]);
    }
    case PlotKind::Oblique: {
      // cabinet projection of (x0, x1, x2)
      return {x[0] + 0.5 * std::cos(0.6) * x[2], x[1] + 0.5 * std::sin(0.6) * x[2]};
    }
  }
  return {0.0, 0.0};
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double min_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::min_element(v.begin(), v.end());
}

inline double cosine(const Vec& a, const Vec& b) {
  const double n = a.norm() * b.norm();
  return n > 0.0 ? a.dot(b) / n : std::numeric_limits<double>::quiet_NaN();
}

inline Json series(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(io::number(x));
  return a;
}

struct RunRecord {
  std::uint64_t seed = 0;
  std::string mode;
  Trajectory traj;
  Json summary;
};

inline Json mechanism_run_summary(const Mechanism& m, const RunRecord& r, Index window,
                                  const std::vector<double>& nonpots, const std::vector<double>& cosines) {
  const auto& traj = r.traj;
  const FieldSpec& spec = m.spec;
  std::vector<double> field_cos;
  for (Index t = 0; t < traj.directions.rows(); ++t) {
    const Vec x = traj.iterates.row(t).transpose();
    const double c = cosine(traj.directions.row(t).transpose(), detail::eval_unchecked(spec, x));
    if (std::isfinite(c)) field_cos.push_back(c);
  }
  Json j;
  j["seed"] = r.seed;
  j["mode"] = r.mode;
  j["steps"] = traj.directions.rows();
  j["final_window_diameter"] = io::number(orbit_diameter(traj, window));
  j["path_length"] = io::number(path_length(traj));
  j["final_iterate"] = io::to_json(Vec(traj.iterates.row(traj.iterates.rows() - 1).transpose()));
  j["refreshes"] = traj.refresh_steps.size();
  j["nonpot_mean"] = io::number(mean_of(nonpots));
  j["nonpot_min"] = io::number(min_of(nonpots));
  j["field_cosine_mean"] = io::number(mean_of(field_cos));
  j["cosine_mean"] = io::number(mean_of(cosines));
  j["cosine_series"] = series(cosines);
  return j;
}

inline Json aggregate(const std::vector<RunRecord>& runs, const std::vector<std::string>& modes,
                      const std::vector<std::string>& keys) {
  Json agg = Json::object();
  for (const auto& mode : modes) {
    Json m = Json::object();
    for (const auto& key : keys) {
      std::vector<double> vals;
      for (const auto& r : runs) {
        if (r.mode == mode && r.summary.at(key).is_number()) vals.push_back(r.summary.at(key).get<double>());
      }
      m[key + "_mean"] = io::number(mean_of(vals));
      m[key + "_min"] = io::number(min_of(vals));
    }
    agg[mode] = m;
  }
  return agg;
}

// --------------------------------------------------------- mechanism

inline int cmd_mechanism(const Options& opt, std::ostream& log = std::cout) {
  const Experiment e = load_experiment(opt.config);
  if (!e.is_mechanism()) throw ConfigError("mechanism: config experiment is '" + e.kind + "'");
  const Mechanism m = mechanism_of(e);
  const RunConfig base = run_config_of(e);
  const ProjParams pp = proj_params_of(e, m.spec.dim());
  const auto modes = modes_of(e);
  const auto seeds = seeds_of(e, opt);
  const Index window = std::min<Index>(e.cfg.value("window", 200), base.steps + 1);
  const fs::path out = output_dir(e, opt);
  const auto pot_dir = potential_direction(m.spec);
  const bool euclidean = !pp.metric || pp.metric->is_identity();

  std::vector<RunRecord> runs(seeds.size() * modes.size());
  parallel_for(seeds.size(), thread_count(opt, seeds.size()), [&](std::size_t s) {
    for (std::size_t k = 0; k < modes.size(); ++k) {
      RunRecord& r = runs[s * modes.size() + k];
      r.seed = seeds[s];
      r.mode = modes[k];
      RunConfig rc = base;
      rc.seed = seeds[s];
      rc.mode = parse_mode(modes[k]);
      std::vector<double> nonpots, cosines;
      RefreshObserver obs = [&](const RefreshView& v) {
        nonpots.push_back(v.result.nonpot);
        if (!pot_dir || !euclidean) return;
        const PointMat dirs = lift_all_nodes(v.graph, v.result.phi, Metric::identity(m.spec.dim()), pp.ridge);
        double sum = 0.0;
        int count = 0;
        for (Index i = 0; i < dirs.rows(); ++i) {
          const double c = cosine(dirs.row(i).transpose(), (*pot_dir)(v.graph.position(i)));
          if (std::isfinite(c)) sum += c, ++count;
        }
        cosines.push_back(count ? sum / count : std::numeric_limits<double>::quiet_NaN());
      };
      r.traj = run_dynamics(m.spec, m.domain, m.x0, rc, pp, obs);
      io::write_trajectory_csv(out / ("trajectory_" + r.mode + "_" + std::to_string(r.seed) + ".csv"), r.traj);
      if (r.traj.net) emit_json(out / ("net_" + std::to_string(r.seed) + ".json"), io::net_to_json(*r.traj.net), "net");
      r.summary = mechanism_run_summary(m, r, window, nonpots, cosines);
    }
  });

  Json summary;
  summary["experiment"] = e.kind;
  summary["dim"] = m.spec.dim();
  summary["window"] = window;
  summary["modes"] = modes;
  summary["seeds"] = seeds;
  Json arr = Json::array();
  for (const auto& r : runs) arr.push_back(r.summary);
  summary["runs"] = arr;
  summary["aggregate"] = aggregate(runs, modes, {"final_window_diameter", "path_length", "nonpot_mean", "cosine_mean",
                                                 "field_cosine_mean"});
  emit_json(out / "summary.json", summary, "summary");

  for (const auto& mode : modes) {
    std::vector<svg::Panel> panels(m.plot == PlotKind::SimplexPair ? 2 : 1);
    const char* axes[4][2] = {{"x_0", "x_1"}, {"p", "q"}, {"", ""}, {"x_0 (+x_2)", "x_1 (+x_2)"}};
    for (std::size_t p = 0; p < panels.size(); ++p) {
      panels[p].triangle = m.plot == PlotKind::SimplexPair;
      panels[p].title = m.plot == PlotKind::SimplexPair ? (p == 0 ? "player 1 mixed strategy" : "player 2 mixed strategy")
                                                        : "trajectory";
      panels[p].x_label = axes[static_cast<int>(m.plot)][0];
      panels[p].y_label = axes[static_cast<int>(m.plot)][1];
      for (const auto& r : runs) {
        if (r.mode != mode) continue;
        svg::Polyline line{{}, "seed " + std::to_string(r.seed)};
        for (Index t = 0; t < r.traj.iterates.rows(); ++t)
          line.points.push_back(plot_point(m.plot, r.traj.iterates.row(t).transpose(), static_cast<int>(p)));
        panels[p].lines.push_back(std::move(line));
      }
    }
    svg::write(out / ("phase_" + mode + ".svg"), panels, e.kind + " (" + mode + ")");
  }
  log << "mechanism: " << runs.size() << " runs written to " << out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------ project

inline int cmd_project(const Options& opt, std::ostream& log = std::cout) {
  const Experiment e = load_experiment(opt.config);
  if (e.kind != "project") throw ConfigError("project: config experiment is '" + e.kind + "'");
  if (!e.has("input")) throw ConfigError("project: 'input' is required");
  const fs::path input = e.resolve(e.at("input").get<std::string>());
  const io::Samples samples = io::samples_from_csv(io::read_csv(input));
  const Index d = samples.points.cols();
  if (opt.seed) log << "project: --seed has no effect (the projection is deterministic)\n";

  const Json p = e.section("projection");
  for (const char* key : {"k_query", "sampling"}) {
    if (p.contains(key)) throw ConfigError(std::string("projection.") + key + " does not apply to project");
  }
  std::optional<Metric> metric = metric_of(p, d);
  if (e.has("metric_file")) {
    if (metric) throw ConfigError("project: give either projection.metric or metric_file");
    const Json mj = io::read_json(e.resolve(e.at("metric_file").get<std::string>()));
    const Mat mm = matrix_of(mj.is_object() && mj.contains("metric") ? mj.at("metric") : mj, "metric_file");
    if (mm.rows() != d || mm.cols() != d) throw ConfigError("metric_file: matrix must be " + std::to_string(d) + "x" + std::to_string(d));
    metric = Metric::spd(mm);
  }
  const Metric M = metric ? *metric : Metric::identity(d);
  const Index k = e.get<Index>(p, "k", 8);
  const WeightScheme ws = weights_of(e, p);
  const double ridge = e.get(p, "ridge", 1e-4);
  ProjectionOptions po;
  po.tol = e.get(p, "solver_tol", po.tol);
  po.max_iter = e.get(p, "solver_max_iter", po.max_iter);

  const SampleGraph g = build_knn_graph(samples.points, k, M, ws);
  const EdgeFlow omega = edge_flow(g, samples.values, M);
  const ProjectionResult res = project_flow(g, omega, po);
  const PointMat dirs = lift_all_nodes(g, res.phi, M, ridge);
  const fs::path out = output_dir(e, opt);

  Json j;
  j["input"] = input.filename().string();
  j["nodes"] = g.num_nodes();
  j["edges"] = g.num_edges();
  j["components"] = g.num_components();
  j["dim"] = d;
  j["k"] = k;
  j["weights"] = ws.kind == WeightScheme::Kind::Uniform ? "uniform" : "gaussian";
  j["metric"] = M.is_identity() ? "identity" : "spd";
  const Json energies = io::to_json(res);
  for (const auto& [key, val] : energies.items()) j[key] = val;
  const double pyth = std::abs(res.energy_total - res.energy_pot - res.energy_cyc);
  j["pythagoras_residual"] = io::number(res.energy_total > 0 ? pyth / res.energy_total : pyth);
  emit_json(out / "projection.json", j, "projection");

  PointMat pot(g.num_nodes(), 2);
  for (Index i = 0; i < g.num_nodes(); ++i) pot.row(i) << static_cast<double>(i), res.phi.values[i];
  io::write_csv(out / "potential.csv", {"node", "phi"}, pot);

  PointMat edges(g.num_edges(), 6);
  for (Index e2 = 0; e2 < g.num_edges(); ++e2) {
    const auto& ed = g.edges()[static_cast<std::size_t>(e2)];
    edges.row(e2) << static_cast<double>(ed.i), static_cast<double>(ed.j), g.weights()[static_cast<std::size_t>(e2)],
        omega.values[e2], res.omega_pot.values[e2], res.omega_cyc.values[e2];
  }
  io::write_csv(out / "edges.csv", {"i", "j", "w", "omega", "omega_pot", "omega_cyc"}, edges);

  PointMat dd(g.num_nodes(), d + 1);
  for (Index i = 0; i < g.num_nodes(); ++i) {
    dd(i, 0) = static_cast<double>(i);
    dd.row(i).tail(d) = dirs.row(i);
  }
  std::vector<std::string> header{"node"};
  for (auto& s : io::indexed_names("g_", d)) header.push_back(s);
  io::write_csv(out / "directions.csv", header, dd);
  log << "project: NonPot " << io::format_double(res.nonpot) << " on " << g.num_nodes() << " nodes, written to "
      << out.string() << "\n";
  return 0;
}

// --------------------------------------------------------------- ctde

inline MatrixGame game_of(const Experiment& e) {
  if (!e.has("game")) return MatrixGame::matching_pennies();
  const auto& g = e.at("game");
  if (g.is_string()) return g.get<std::string>() == "coordination" ? MatrixGame::coordination() : MatrixGame::matching_pennies();
  try {
    return io::game_from_json(g);
  } catch (const io::IoError& err) {
    throw ConfigError(err.what());
  }
}

inline int cmd_ctde(const Options& opt, std::ostream& log = std::cout) {
  const Experiment e = load_experiment(opt.config);
  if (e.kind != "ctde") throw ConfigError("ctde: config experiment is '" + e.kind + "'");
  const MatrixGame game = game_of(e);
  const Index d = game.m() + game.n();
  const RunConfig base = run_config_of(e);
  const ProjParams pp = proj_params_of(e, d);
  const auto modes = modes_of(e);
  const auto seeds = seeds_of(e, opt);
  const double target = e.cfg.value("target_prob", 0.99);
  const double init_scale = e.cfg.value("init_scale", 0.5);
  const Index window = std::min<Index>(e.cfg.value("window", 200), base.steps + 1);
  std::optional<LogitPolicyPair> fixed_init;
  if (e.has("init_logits")) {
    const auto& il = e.at("init_logits");
    fixed_init = LogitPolicyPair{vector_of(il.at("theta1"), "init_logits.theta1"), vector_of(il.at("theta2"), "init_logits.theta2")};
    if (fixed_init->theta1.size() != game.m() || fixed_init->theta2.size() != game.n())
      throw ConfigError("init_logits sizes must match the game");
    if (e.has("init_scale")) throw ConfigError("init_scale does not apply when init_logits is given");
  }
  const fs::path out = output_dir(e, opt);

  std::vector<RunRecord> runs(seeds.size() * modes.size());
  parallel_for(seeds.size(), thread_count(opt, seeds.size()), [&](std::size_t s) {
    LogitPolicyPair init;
    if (fixed_init) {
      init = *fixed_init;
    } else {
      std::mt19937_64 rng(seeds[s] ^ 0x5bd1e995ULL);
      std::normal_distribution<double> nd(0.0, init_scale);
      init.theta1 = Vec::NullaryExpr(game.m(), [&] { return nd(rng); });
      init.theta2 = Vec::NullaryExpr(game.n(), [&] { return nd(rng); });
    }
    for (std::size_t k = 0; k < modes.size(); ++k) {
      RunRecord& r = runs[s * modes.size() + k];
      r.seed = seeds[s];
      r.mode = modes[k];
      RunConfig rc = base;
      rc.seed = seeds[s];
      rc.mode = parse_mode(modes[k]);
      const CtdeRun run = ctde_train(game, init, rc, pp);
      r.traj = run.trajectory;
      io::write_trajectory_csv(out / ("trajectory_" + r.mode + "_" + std::to_string(r.seed) + ".csv"), r.traj);
      if (r.traj.net) emit_json(out / ("net_" + std::to_string(r.seed) + ".json"), io::net_to_json(*r.traj.net), "net");

      std::optional<Index> hit;
      for (Index t = 0; t < r.traj.iterates.rows() && !hit; ++t) {
        const auto pol = LogitPolicyPair::split(r.traj.iterates.row(t).transpose(), game.m());
        if (std::min(pol.p().maxCoeff(), pol.q().maxCoeff()) >= target) hit = t;
      }
      std::vector<double> nonpots;
      for (const auto& [step, np] : run.metrics.nonpot) nonpots.push_back(np);
      double proj = 0.0, raw = 0.0;
      for (const auto& sd : r.traj.steps) proj += sd.proj_norm, raw += sd.field_norm;
      const auto last = LogitPolicyPair::split(r.traj.iterates.row(r.traj.iterates.rows() - 1).transpose(), game.m());
      Json j;
      j["seed"] = r.seed;
      j["mode"] = r.mode;
      j["steps"] = rc.steps;
      j["steps_to_target"] = hit ? Json(*hit) : Json(nullptr);
      j["final_p"] = io::to_json(last.p());
      j["final_q"] = io::to_json(last.q());
      j["final_payoffs"] = {io::number(run.metrics.payoff1.back()), io::number(run.metrics.payoff2.back())};
      j["final_window_diameter"] = io::number(orbit_diameter(r.traj, window));
      j["refreshes"] = r.traj.refresh_steps.size();
      j["nonpot_mean"] = io::number(mean_of(nonpots));
      j["nonpot_min"] = io::number(min_of(nonpots));
      j["proj_to_raw"] = io::number(raw > 0 ? proj / raw : std::numeric_limits<double>::quiet_NaN());
      r.summary = j;
    }
  });

  Json summary;
  summary["experiment"] = e.kind;
  summary["game"] = io::game_to_json(game);
  summary["identical_interest"] = game.identical_interest();
  summary["target_prob"] = target;
  summary["window"] = window;
  summary["modes"] = modes;
  summary["seeds"] = seeds;
  Json arr = Json::array();
  for (const auto& r : runs) arr.push_back(r.summary);
  summary["runs"] = arr;
  summary["aggregate"] = aggregate(runs, modes, {"final_window_diameter", "nonpot_mean", "proj_to_raw"});
  emit_json(out / "summary.json", summary, "ctde_summary");

  for (const auto& mode : modes) {
    svg::Panel panel;
    panel.title = "P(action 0) for each agent";
    panel.x_label = "p_0";
    panel.y_label = "q_0";
    for (const auto& r : runs) {
      if (r.mode != mode) continue;
      svg::Polyline line{{}, "seed " + std::to_string(r.seed)};
      for (Index t = 0; t < r.traj.iterates.rows(); ++t) {
        const auto pol = LogitPolicyPair::split(r.traj.iterates.row(t).transpose(), game.m());
        line.points.emplace_back(pol.p()[0], pol.q()[0]);
      }
      panel.lines.push_back(std::move(line));
    }
    svg::write(out / ("phase_" + mode + ".svg"), {panel}, "ctde (" + mode + ")");
  }
  log << "ctde: " << runs.size() << " runs written to " << out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------ diagnose

struct Check {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  /// Pass rule: measured <relation> threshold, relation one of le, lt, ge, gt.
  std::string relation = "le";
  Json details = Json::object();

  bool pass() const {
    if (!std::isfinite(measured)) return false;
    if (relation == "ge") return measured >= threshold;
    if (relation == "gt") return measured > threshold;
    if (relation == "lt") return measured < threshold;
    return measured <= threshold;
  }
  Json to_json() const {
    Json j;
    j["name"] = name;
    j["pass"] = pass();
    j["measured"] = io::number(measured);
    j["relation"] = relation;
    j["threshold"] = threshold;
    j["details"] = details;
    return j;
  }
};

struct DiagnoseSettings {
  int graphs = 20;
  Index max_nodes = 200;
  Index oracle_max_nodes = 50;
  int psi_trials = 50;
  int flows = 1000;
  int quadratics = 10;
  Index max_dim = 10;
  std::vector<int> gap_T{10, 100, 1000};
  std::vector<double> gap_rho{0.0, 0.25, 0.5};
  double delta_bar = 0.05;
  ProjectionOptions solver;
};

namespace detail_diag {

inline std::vector<double> normal_draws(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = g(rng);
  return v;
}

inline Vec normal_vec(Index n, std::mt19937_64& rng) {
  const auto v = normal_draws(n, rng);
  return Eigen::Map<const Vec>(v.data(), n);
}

/// Projection that tolerates an unconverged solver by keeping its partial
/// potential, so a bad solver shows up as a failed invariant, not a crash.
inline ProjectionResult project_lenient(const SampleGraph& g, const EdgeFlow& omega, const ProjectionOptions& opts,
                                        bool& converged) {
  try {
    converged = true;
    return project_flow(g, omega, opts);
  } catch (const SolverError& err) {
    converged = false;
    return assemble_projection(g, omega, err.partial(), err.residual(), err.iterations(), opts.eps);
  }
}

/// Dense least-squares potential on the mean-zero subspace (normal equations
/// plus component indicator outer products to pin the gauge).
inline Vec dense_potential(const SampleGraph& g, const Vec& omega) {
  const Index n = g.num_nodes();
  Mat B = Mat::Zero(g.num_edges(), n);
  for (Index e = 0; e < g.num_edges(); ++e) {
    B(e, g.edges()[static_cast<std::size_t>(e)].i) = -1.0;
    B(e, g.edges()[static_cast<std::size_t>(e)].j) = 1.0;
  }
  const Vec w = Eigen::Map<const Vec>(g.weights().data(), g.num_edges());
  Mat L = B.transpose() * w.asDiagonal() * B;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (g.components()[static_cast<std::size_t>(i)] == g.components()[static_cast<std::size_t>(j)]) L(i, j) += 1.0;
    }
  }
  return L.fullPivLu().solve(B.transpose() * w.asDiagonal() * omega);
}

}  // namespace detail_diag

inline DiagnoseSettings diagnose_settings_of(const Experiment& e) {
  const Json j = e.section("diagnose");
  DiagnoseSettings s;
  s.graphs = e.get(j, "graphs", s.graphs);
  s.max_nodes = e.get<Index>(j, "max_nodes", s.max_nodes);
  s.oracle_max_nodes = e.get<Index>(j, "oracle_max_nodes", s.oracle_max_nodes);
  s.psi_trials = e.get(j, "psi_trials", s.psi_trials);
  s.flows = e.get(j, "flows", s.flows);
  s.quadratics = e.get(j, "quadratics", s.quadratics);
  s.max_dim = e.get<Index>(j, "max_dim", s.max_dim);
  if (j.contains("gap_T")) s.gap_T = j.at("gap_T").get<std::vector<int>>();
  if (j.contains("gap_rho")) s.gap_rho = j.at("gap_rho").get<std::vector<double>>();
  s.delta_bar = e.get(j, "delta_bar", s.delta_bar);
  s.solver.tol = e.get(j, "solver_tol", s.solver.tol);
  s.solver.max_iter = e.get(j, "solver_max_iter", s.solver.max_iter);
  return s;
}

/// Runs the invariant suite; the checks are returned in a fixed order.
inline std::vector<Check> run_diagnostics(const DiagnoseSettings& s, std::uint64_t seed) {
  namespace dd = detail_diag;
  std::vector<Check> checks;
  std::mt19937_64 rng(seed);

  // graph corpus: orthogonality, energy split, oracle equivalence
  {
    Check ortho{"discrete_orthogonality", 0.0, 1e-7};
    Check energy{"energy_decomposition", 0.0, 1e-6};
    Check oracle{"oracle_equivalence", 0.0, 1e-8};
    int unconverged = 0, oracle_graphs = 0;
    std::uniform_int_distribution<Index> nodes(20, s.max_nodes);
    for (int gi = 0; gi < s.graphs; ++gi) {
      const Index n = gi < s.graphs / 2 ? std::min<Index>(nodes(rng), s.oracle_max_nodes) : nodes(rng);
      const Index d = 2 + gi % 2;
      const Index k = gi % 4 < 2 ? 4 : 8;
      std::uniform_real_distribution<double> u(0.0, 1.0);
      PointMat pts(n, d);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) pts(i, j) = u(rng);
      const SampleGraph g = build_knn_graph(pts, std::min<Index>(k, n - 1), Metric::identity(d));
      const EdgeFlow omega = EdgeFlow::on(g, dd::normal_vec(g.num_edges(), rng));
      bool converged = true;
      const auto res = dd::project_lenient(g, omega, s.solver, converged);
      unconverged += converged ? 0 : 1;
      ortho.measured = std::max(ortho.measured, orthogonality_report(res, g, s.psi_trials, rng()));
      energy.measured = std::max(energy.measured, std::abs(res.energy_total - res.energy_pot - res.energy_cyc) /
                                                      res.energy_total);
      if (n <= s.oracle_max_nodes) {
        ++oracle_graphs;
        const Vec phi = dd::dense_potential(g, omega.values);
        oracle.measured = std::max(oracle.measured, (phi - res.phi.values).cwiseAbs().maxCoeff());
      }
    }
    ortho.details = {{"graphs", s.graphs}, {"psi_trials", s.psi_trials}, {"unconverged_solves", unconverged}};
    energy.details = {{"graphs", s.graphs}};
    oracle.details = {{"graphs", oracle_graphs}, {"max_nodes", s.oracle_max_nodes}};
    checks.push_back(ortho);
    checks.push_back(energy);
    checks.push_back(oracle);
  }

  // NonPot bounds and monotonicity under cycle scaling
  {
    Check bounds{"nonpot_bounds", 0.0, 0.0};
    Check mono{"nonpot_monotone_in_cycle_scale", 0.0, 0.0};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointMat pts(60, 2);
    for (Index i = 0; i < pts.rows(); ++i) pts.row(i) << u(rng), u(rng);
    const SampleGraph g = build_knn_graph(pts, 6, Metric::identity(2));
    for (int f = 0; f < s.flows; ++f) {
      const double scale = std::pow(10.0, 6.0 * u(rng) - 3.0);
      const EdgeFlow omega = EdgeFlow::on(g, scale * dd::normal_vec(g.num_edges(), rng));
      bool converged = true;
      const double np = dd::project_lenient(g, omega, s.solver, converged).nonpot;
      bounds.measured = std::max({bounds.measured, -np, np - 1.0});
    }
    // with a fixed potential part, NonPot must strictly grow with the cycle scale;
    // measured is the largest change NonPot(prev) - NonPot(next), so it must stay negative
    mono.measured = -std::numeric_limits<double>::infinity();
    mono.relation = "lt";
    const std::vector<double> scales{0.5, 1.0, 2.0, 4.0};
    for (int trial = 0; trial < 20; ++trial) {
      bool converged = true;
      const Vec pot = apply_incidence(g, dd::normal_vec(g.num_nodes(), rng));
      const Vec cyc = dd::project_lenient(g, EdgeFlow::on(g, dd::normal_vec(g.num_edges(), rng)), s.solver, converged)
                          .omega_cyc.values;
      double prev = std::numeric_limits<double>::quiet_NaN();
      for (double sc : scales) {
        const double np = dd::project_lenient(g, EdgeFlow::on(g, pot + sc * cyc), s.solver, converged).nonpot;
        if (!std::isnan(prev)) mono.measured = std::max(mono.measured, prev - np);
        prev = np;
      }
    }
    bounds.details = {{"flows", s.flows}};
    mono.details = {{"trials", 20}, {"scales", scales}};
    checks.push_back(bounds);
    checks.push_back(mono);
  }

  // Euler growth and RK4 conservation for F = (v, -u)
  {
    Check euler{"euler_norm_growth", 0.0, 1e-12};
    const auto skew = FieldSpec::bilinear_skew_2d(1.0, 0.0);
    Json per = Json::object();
    for (double eta : {0.01, 0.1, 0.5}) {
      RunConfig rc;
      rc.steps = 100;
      rc.eta = eta;
      const auto traj = run_dynamics(skew, DomainSpec::unconstrained(2), (Vec(2) << 1.0, 0.5).finished(), rc);
      double worst = 0.0;
      for (Index t = 0; t < rc.steps; ++t) {
        const double ratio = traj.iterates.row(t + 1).squaredNorm() / traj.iterates.row(t).squaredNorm();
        worst = std::max(worst, std::abs(ratio - (1.0 + eta * eta)));
      }
      per[io::format_double(eta)] = worst;
      euler.measured = std::max(euler.measured, worst);
    }
    euler.details = {{"max_abs_ratio_error_by_eta", per}};
    checks.push_back(euler);

    Check rk4{"rk4_norm_conservation", 0.0, 1e-8};
    const FieldFn f = [](const Vec& z) { return Vec((Vec(2) << z[1], -z[0]).finished()); };
    const Vec z0 = (Vec(2) << 1.0, 0.5).finished();
    const PointMat states = rk4_integrate(f, z0, 1e-3, 10000);
    for (Index t = 0; t < states.rows(); ++t)
      rk4.measured = std::max(rk4.measured, std::abs(states.row(t).squaredNorm() - z0.squaredNorm()) / z0.squaredNorm());
    rk4.details = {{"dt", 1e-3}, {"steps", 10000}};
    checks.push_back(rk4);
  }

  // Lyapunov improvement and mapping-energy bound on random concave quadratics
  {
    Check lyap{"lyapunov_improvement", 0.0, 1e-10};
    Check mapping{"mapping_energy_bound", 0.0, 1.0 + 1e-9};
    std::uniform_int_distribution<Index> dims(1, s.max_dim);
    for (int q = 0; q < s.quadratics; ++q) {
      const Index d = dims(rng);
      Mat A(d, d);
      for (Index i = 0; i < d; ++i) A.row(i) = dd::normal_vec(d, rng).transpose();
      const Mat Q = A.transpose() * A + 0.1 * Mat::Identity(d, d);
      const Vec c = 1.5 * dd::normal_vec(d, rng);
      const auto spec = FieldSpec::quadratic_potential(Q, c);
      const auto box = DomainSpec::box(d, -1.0, 1.0);
      RunConfig rc;
      rc.mode = DynamicsMode::ExactPotentialAscent;
      rc.eta = 1.0 / lipschitz_constant(Q);
      rc.steps = 200;
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const Vec x0 = Vec::NullaryExpr(d, [&] { return u(rng); });
      const auto traj = run_dynamics(spec, box, x0, rc);
      const auto pot = *spec.reference_potential();
      lyap.measured = std::max(lyap.measured, lyapunov_violation(traj, pot));
      const auto p = theory_params_for(spec, box, rc.eta, rc.steps);
      const double bound = (2.0 / rc.eta) * (p.phi_max - p.phi_min);
      mapping.measured = std::max(mapping.measured, bound > 0 ? mapping_energy(traj) / bound : 0.0);
    }
    lyap.details = {{"quadratics", s.quadratics}, {"max_dim", s.max_dim}};
    mapping.details = {{"quadratics", s.quadratics}, {"measured_is", "sum ||G||^2 / ((2/eta)(Phi_max - Phi_min))"}};
    checks.push_back(lyap);
    checks.push_back(mapping);
  }

  // gap bounds, exact and inexact, on a potential-plus-skew field over [-1,1]^2
  {
    Mat Q(2, 2);
    Q << 2.0, 0.4, 0.4, 1.0;
    const Vec c = (Vec(2) << 0.5, -0.3).finished();
    const Mat S = (Mat(2, 2) << 0, 1, -1, 0).finished();
    const auto box = DomainSpec::box(2, -1.0, 1.0);
    for (bool inexact : {false, true}) {
      Check gap{inexact ? "gap_bound_inexact" : "gap_bound_exact", -std::numeric_limits<double>::infinity(), 1.0 + 1e-9};
      Check mono{inexact ? "gap_first_term_decreasing_inexact" : "gap_first_term_decreasing",
                 -std::numeric_limits<double>::infinity(), 0.0};
      Json cases = Json::array();
      for (double rho : s.gap_rho) {
        const auto spec = FieldSpec::potential_plus_skew(Q, c, S, rho);
        const double eta = 1.0 / lipschitz_constant(Q);
        double prev_first = std::numeric_limits<double>::infinity();
        std::vector<int> Ts = s.gap_T;
        std::sort(Ts.begin(), Ts.end());
        for (int T : Ts) {
          const auto params = theory_params_for(spec, box, eta, T, inexact ? s.delta_bar : 0.0);
          RunConfig rc;
          rc.mode = DynamicsMode::ExactPotentialAscent;
          rc.eta = eta;
          rc.steps = T;
          rc.seed = seed + static_cast<std::uint64_t>(T);
          ProjParams pp;
          pp.direction_noise = inexact ? s.delta_bar : 0.0;
          const auto traj = run_dynamics(spec, box, (Vec(2) << -1.0, 1.0).finished(), rc, pp);
          const auto rep = check_gap_bound(traj, params, spec, box);
          gap.measured = std::max(gap.measured, rep.rhs > 0 ? rep.lhs / rep.rhs : rep.lhs);
          if (std::isfinite(prev_first)) mono.measured = std::max(mono.measured, rep.first_term - prev_first);
          prev_first = rep.first_term;
          Json cj = io::to_json(rep);
          cj["rho"] = rho;
          cj["T"] = T;
          cj["params"] = io::to_json(params);
          cases.push_back(cj);
        }
      }
      gap.details = {{"measured_is", "max lhs / rhs"}, {"cases", cases}};
      mono.details = {{"measured_is", "largest increase of the first term between consecutive T"}};
      mono.relation = "lt";
      checks.push_back(gap);
      checks.push_back(mono);
    }
  }

  // CTDE integrability split
  {
    Check ident{"ctde_identical_interest_integrable", 0.0, 1e-6};
    const auto fn = stacked_field_fn(MatrixGame::coordination());
    for (int t = 0; t < 50; ++t) {
      const Vec theta = dd::normal_vec(4, rng);
      ident.measured = std::max(ident.measured, jacobian_split(jacobian_fd(fn, theta)).rot_energy);
    }
    ident.details = {{"logit_pairs", 50}};
    checks.push_back(ident);

    Check circ{"ctde_zero_sum_circulation", 0.0, 1e-4, "gt"};
    const Vec u = (Vec(4) << 1, 0, 0, 0).finished();
    const Vec v = (Vec(4) << 0, 0, 1, 0).finished();
    circ.measured = std::abs(parallelogram_circulation(stacked_field_fn(MatrixGame::matching_pennies()), Vec::Zero(4), u, v, 0.05));
    circ.details = {{"eps", 0.05}};
    checks.push_back(circ);
  }

  // neural loss gradient vs central differences
  {
    Check grad{"neural_gradient_exactness", 0.0, 1e-5};
    const Index d = 3, H = 16, B = 8;
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
      PotentialNet net = PotentialNet::zeros(d, H);
      net.W1 = Mat::NullaryExpr(H, d, [&] { return 0.8 * g(rng); });
      net.b1 = Vec::NullaryExpr(H, [&] { return 0.5 * g(rng); });
      net.a = Vec::NullaryExpr(H, [&] { return 0.7 * g(rng); });
      const PointMat x = PointMat::NullaryExpr(B, d, [&] { return 2.0 * g(rng); });
      const PointMat F = PointMat::NullaryExpr(B, d, [&] { return g(rng); });
      NeuralProjConfig cfg;
      cfg.lambda_gauge = 0.5;
      cfg.lambda_wd = 0.01;
      const Metric M = Metric::identity(d);
      const Vec analytic = proj_loss_grad(net, M, x, F, cfg).to_flat();
      const Vec theta = net.to_flat();
      Vec fd(theta.size());
      for (Index p = 0; p < theta.size(); ++p) {
        Vec tp = theta, tm = theta;
        tp[p] += 1e-6;
        tm[p] -= 1e-6;
        fd[p] = (proj_loss(PotentialNet::from_flat(tp, d, H), M, x, F, cfg) -
                 proj_loss(PotentialNet::from_flat(tm, d, H), M, x, F, cfg)) / 2e-6;
      }
      const double scale = fd.cwiseAbs().maxCoeff();
      for (Index p = 0; p < theta.size(); ++p)
        grad.measured = std::max(grad.measured, std::abs(analytic[p] - fd[p]) / std::max(std::abs(fd[p]), 1e-3 * scale));
    }
    grad.details = {{"nets", 10}, {"width", H}, {"dim", d}, {"batch", B}};
    checks.push_back(grad);
  }

  // the trapezoid edge form integrates a quadratic potential exactly
  {
    Check mc{"metric_consistency_quadratic", 0.0, 1e-10};
    Mat Q(3, 3);
    Q << 2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5;
    const field::QuadraticPotential pot{Q, (Vec(3) << 0.2, -0.1, 0.4).finished()};
    const Mat Mm = (Mat(3, 3) << 1.5, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.8).finished();
    const Metric M = Metric::spd(Mm);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointMat pts(80, 3);
    for (Index i = 0; i < pts.rows(); ++i) pts.row(i) << u(rng), u(rng), u(rng);
    const SampleGraph gr = build_knn_graph(pts, 6, M);
    PointMat vals(pts.rows(), 3);
    for (Index i = 0; i < pts.rows(); ++i) vals.row(i) = M.solve(pot.gradient(pts.row(i).transpose())).transpose();
    const EdgeFlow omega = edge_flow(gr, vals, M);
    for (Index e = 0; e < gr.num_edges(); ++e) {
      const auto& ed = gr.edges()[static_cast<std::size_t>(e)];
      const double exact = pot.value(pts.row(ed.j).transpose()) - pot.value(pts.row(ed.i).transpose());
      mc.measured = std::max(mc.measured, std::abs(omega.values[e] - exact));
    }
    mc.details = {{"edges", gr.num_edges()}};
    checks.push_back(mc);
  }
  return checks;
}

inline int cmd_diagnose(const Options& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  const Experiment e = load_experiment(opt.config);
  if (e.kind != "diagnose") throw ConfigError("diagnose: config experiment is '" + e.kind + "'");
  const auto seeds = seeds_of(e, opt);
  if (seeds.size() != 1) throw ConfigError("diagnose: give exactly one seed");
  const DiagnoseSettings s = diagnose_settings_of(e);
  const fs::path out = output_dir(e, opt);
  const auto checks = run_diagnostics(s, seeds.front());

  Json doc;
  doc["seed"] = seeds.front();
  doc["solver"] = {{"tol", s.solver.tol}, {"max_iter", s.solver.max_iter}};
  Json arr = Json::array();
  Json failed = Json::array();
  for (const auto& c : checks) {
    arr.push_back(c.to_json());
    if (!c.pass()) failed.push_back(c.name);
    (c.pass() ? log : err) << (c.pass() ? "PASS " : "FAIL ") << c.name << ": measured " << io::format_double(c.measured)
                           << " (" << c.relation << " " << io::format_double(c.threshold) << ")\n";
  }
  doc["checks"] = arr;
  doc["passed"] = failed.empty();
  doc["failed"] = failed;
  emit_json(out / "diagnostics.json", doc, "diagnostics");
  return failed.empty() ? 0 : 1;
}

}  // namespace hodgeflow::cli
