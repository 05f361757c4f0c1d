#pragma once

// Experiment pipelines behind the command-line tool:
//   disintegrate, transport, certify, report.
// Exit codes: 0 success or pass, 1 certification failed, 2 malformed config
// or missing manifest, 3 error inside a named stage.

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "orbitcurv/convexity.hpp"
#include "orbitcurv/geometry.hpp"
#include "orbitcurv/io.hpp"
#include "orbitcurv/lp.hpp"
#include "orbitcurv/measures.hpp"
#include "orbitcurv/profile.hpp"
#include "orbitcurv/transport.hpp"

namespace orbitcurv::pipeline {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kCertifyFail = 1, kBadInput = 2, kStageError = 3 };

/// Failure inside a pipeline stage; reported with exit code 3.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Experiment configuration.

struct ManifoldSpec {
  std::string profile = "constant";
  double u_min = -1, u_max = 1;
  int fiber_dim = 1;
  double fiber_period = kTwoPi;
  double clamp_fraction = 1e-3;
  double value = 1, slope = 1, offset = 0;
  std::vector<double> knots, values;
};

struct DensitySpec {
  std::string source = "volume";
  double lo = 0, hi = 0, center = 0, sigma = 0.1, c0 = 0, c1 = 0, radius = 0.1;
  int power = 4;
  int modes = 4;
  std::string path;
  std::string anchor;  // config path for messages
};

struct TransportSpec {
  DensitySpec source, target;
  std::size_t n_time = 8;
  bool lp = false;
  std::size_t lp_atoms = 256;
};

struct CertifySpec {
  std::optional<double> k;  // absent = estimate only
  double tolerance = 0.02;
  SamplerConfig sampler;
  bool taylor = false;
  std::optional<double> taylor_base;
  double taylor_speed = 1.0;
  TaylorConfig taylor_cfg;
};

struct ExperimentConfig {
  io::ConfigDocument doc;
  std::uint64_t seed = 0;
  std::optional<std::string> out;
  ManifoldSpec manifold;
  std::size_t n_u = 256, n_theta = 128;
  std::optional<double> grid_lo, grid_hi;
  std::optional<DensitySpec> density;
  std::optional<TransportSpec> transport;
  std::optional<CertifySpec> certify;
};

namespace detail {

inline void check_theta_list(io::ConfigNode& node, const std::string& key, const std::vector<double>& v) {
  if (v.empty()) node.fail(key, "must not be empty");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0 && v[i] <= 0.5)) node.fail_element(key, i, "theta must lie in (0, 0.5]");
  }
}

inline void check_time_list(io::ConfigNode& node, const std::string& key, const std::vector<double>& v,
                            std::size_t n_time) {
  if (v.empty()) node.fail(key, "must not be empty");
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double k = v[i] * static_cast<double>(n_time);
    if (!(v[i] > 0 && v[i] < 1)) node.fail_element(key, i, "t must lie in (0, 1)");
    if (std::abs(k - std::round(k)) > 1e-9) {
      node.fail_element(key, i, "t must be a multiple of 1/n_time (n_time = " + std::to_string(n_time) + ")");
    }
  }
}

inline DensitySpec parse_density(io::ConfigNode node, bool quotient_only) {
  DensitySpec d;
  d.anchor = node.path();
  const std::vector<std::string> full{"volume", "uniform_band", "gaussian", "two_bump", "random", "csv"};
  const std::vector<std::string> quot{"volume", "uniform_band", "gaussian", "two_bump", "bump"};
  d.source = node.choice("source", quotient_only ? quot : full);
  if (d.source == "uniform_band") {
    d.lo = node.number("lo");
    d.hi = node.number("hi");
    if (!(d.hi > d.lo)) node.fail("hi", "must exceed lo");
  } else if (d.source == "gaussian") {
    d.center = node.number("center");
    d.sigma = node.number("sigma");
    if (!(d.sigma > 0)) node.fail("sigma", "must be > 0");
  } else if (d.source == "two_bump") {
    d.c0 = node.number("c0");
    d.c1 = node.number("c1");
    d.sigma = node.number("sigma");
    if (!(d.sigma > 0)) node.fail("sigma", "must be > 0");
  } else if (d.source == "bump") {
    d.center = node.number("center");
    d.radius = node.number("radius");
    d.power = static_cast<int>(node.integer("power", 4));
    if (!(d.radius > 0)) node.fail("radius", "must be > 0");
    if (d.power < 1) node.fail("power", "must be >= 1");
  } else if (d.source == "random") {
    d.modes = static_cast<int>(node.integer("modes", 4));
    if (d.modes < 0) node.fail("modes", "must be >= 0");
  } else if (d.source == "csv") {
    d.path = node.text("path");
  }
  node.finish();
  return d;
}

}  // namespace detail

/// Parses and validates a config document. `seed_override` replaces the
/// config seed, which is otherwise mandatory.
inline ExperimentConfig parse_experiment(io::ConfigDocument doc, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig cfg;
  cfg.doc = std::move(doc);
  io::ConfigNode root(cfg.doc, cfg.doc.root, "");

  if (root.has("seed")) {
    const std::int64_t s = root.integer("seed");
    if (s < 0) root.fail("seed", "must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(s);
  } else if (!seed_override) {
    root.fail("", "missing required key 'seed'");
  } else {
    root.integer("seed", 0);
  }
  if (seed_override) cfg.seed = *seed_override;
  if (root.has("out")) cfg.out = root.text("out");
  else root.text("out", "");

  auto mnode = root.child("manifold");
  if (!mnode) root.fail("", "missing required section 'manifold'");
  {
    auto& m = *mnode;
    auto& s = cfg.manifold;
    s.profile = m.choice("profile", {"constant", "linear", "sin", "cosh", "sinh", "spline"});
    s.u_min = m.number("u_min");
    s.u_max = m.number("u_max");
    if (!(s.u_max > s.u_min)) m.fail("u_max", "must exceed u_min");
    s.fiber_dim = static_cast<int>(m.integer("fiber_dim", 1));
    if (s.fiber_dim < 1 || s.fiber_dim > 3) m.fail("fiber_dim", "must be 1, 2 or 3");
    s.fiber_period = m.number("fiber_period", kTwoPi);
    if (!(s.fiber_period > 0)) m.fail("fiber_period", "must be > 0");
    s.clamp_fraction = m.number("clamp_fraction", 1e-3);
    if (!(s.clamp_fraction >= 0 && s.clamp_fraction < 0.5)) m.fail("clamp_fraction", "must lie in [0, 0.5)");
    if (s.profile == "constant") s.value = m.number("value", 1.0);
    if (s.profile == "linear") {
      s.slope = m.number("slope", 1.0);
      s.offset = m.number("offset", 0.0);
    }
    if (s.profile == "spline") {
      s.knots = m.numbers("knots");
      s.values = m.numbers("values");
      if (s.knots.size() != s.values.size() || s.knots.size() < 3) {
        m.fail("values", "knots and values need equal length >= 3");
      }
    }
    m.finish();
  }

  if (auto g = root.child("grid")) {
    cfg.n_u = g->count("n_u", 256, 16);
    cfg.n_theta = g->count("n_theta", 128, 16);
    cfg.grid_lo = g->optional_number("lo");
    cfg.grid_hi = g->optional_number("hi");
    if (cfg.grid_lo && cfg.grid_hi && !(*cfg.grid_hi > *cfg.grid_lo)) g->fail("hi", "must exceed lo");
    g->finish();
  }

  if (auto d = root.child("density")) cfg.density = detail::parse_density(*d, false);

  if (auto t = root.child("transport")) {
    TransportSpec ts;
    auto src = t->child("source");
    auto dst = t->child("target");
    if (!src) t->fail("", "missing required section 'source'");
    if (!dst) t->fail("", "missing required section 'target'");
    ts.source = detail::parse_density(*src, true);
    ts.target = detail::parse_density(*dst, true);
    ts.n_time = t->count("n_time", 8, 1);
    ts.lp = t->boolean("lp", false);
    ts.lp_atoms = t->count("lp_atoms", 256, 2);
    if (ts.lp_atoms > 512) t->fail("lp_atoms", "must be <= 512");
    t->finish();
    cfg.transport = ts;
  }

  if (auto c = root.child("certify")) {
    CertifySpec cs;
    if (c->has("K")) {
      const auto& k = c->raw("K");
      if (k.is_string()) {
        if (k.get<std::string>() != "estimate") c->fail("K", "expected a number or \"estimate\"");
      } else if (k.is_number()) {
        cs.k = k.get<double>();
      } else {
        c->fail("K", "expected a number or \"estimate\"");
      }
    } else {
      c->fail("", "missing required key 'K'");
    }
    cs.tolerance = c->number("tolerance", 0.02);
    if (!(cs.tolerance >= 0)) c->fail("tolerance", "must be >= 0");
    if (auto s = c->child("sampler")) {
      auto& sc = cs.sampler;
      sc.count = s->count("count", 200, 1);
      sc.support_radius = s->number("support_radius", 0.1);
      if (!(sc.support_radius > 0 && sc.support_radius < 0.5)) s->fail("support_radius", "must lie in (0, 0.5)");
      sc.max_separation = s->number("max_separation", 0.2);
      if (!(sc.max_separation > 0)) s->fail("max_separation", "must be > 0");
      sc.thetas = s->numbers("thetas", sc.thetas);
      detail::check_theta_list(*s, "thetas", sc.thetas);
      sc.n_u = s->count("n_u", 256, 16);
      sc.n_time = s->count("n_time", 32, 2);
      sc.t_values = s->numbers("t_values", sc.t_values);
      detail::check_time_list(*s, "t_values", sc.t_values, sc.n_time);
      sc.bump_power = static_cast<int>(s->integer("bump_power", 4));
      if (sc.bump_power < 2) s->fail("bump_power", "must be >= 2");
      if (s->has("region")) {
        const auto r = s->numbers("region");
        if (r.size() != 2 || !(r[1] > r[0])) s->fail("region", "expected [lo, hi] with hi > lo");
        sc.region_lo = r[0];
        sc.region_hi = r[1];
      } else {
        s->numbers("region", std::vector<double>{});
      }
      s->finish();
    }
    if (auto tn = c->child("taylor")) {
      cs.taylor = tn->boolean("enabled", true);
      cs.taylor_base = tn->optional_number("base");
      cs.taylor_speed = tn->number("speed", 1.0);
      if (!(cs.taylor_speed != 0)) tn->fail("speed", "must be nonzero");
      auto& tc = cs.taylor_cfg;
      tc.thetas = tn->numbers("thetas", tc.thetas);
      detail::check_theta_list(*tn, "thetas", tc.thetas);
      for (std::size_t i = 1; i < tc.thetas.size(); ++i) {
        if (!(tc.thetas[i] < tc.thetas[i - 1])) tn->fail_element("thetas", i, "theta values must decrease");
      }
      if (tc.thetas.size() < 2) tn->fail("thetas", "needs at least 2 values");
      tc.n_time = tn->count("n_time", 128, 2);
      tc.t = tn->number("t", 0.5);
      {
        if (!(tc.t > 0 && tc.t < 1)) tn->fail("t", "must lie in (0, 1)");
        const double k = tc.t * static_cast<double>(tc.n_time);
        if (std::abs(k - std::round(k)) > 1e-9) tn->fail("t", "must be a multiple of 1/n_time");
      }
      tc.width_scale = tn->number("width_scale", 1.0);
      if (!(tc.width_scale > 0)) tn->fail("width_scale", "must be > 0");
      tc.proportional_width = tn->choice("width", {"proportional", "fixed"}, "proportional") == "proportional";
      tc.n_u = tn->count("n_u", 1024, 16);
      tn->finish();
    }
    c->finish();
    cs.sampler.seed = cfg.seed;
    cfg.certify = cs;
  }
  root.finish();
  return cfg;
}

// ---------------------------------------------------------------------------
// Run bookkeeping.

/// True for messages of the form "file:line: ...".
inline bool is_anchored(const std::string& msg) {
  for (std::size_t p = msg.find(':'); p != std::string::npos; p = msg.find(':', p + 1)) {
    std::size_t q = p + 1;
    while (q < msg.size() && std::isdigit(static_cast<unsigned char>(msg[q]))) ++q;
    if (q > p + 1 && q < msg.size() && msg[q] == ':') return true;
  }
  return false;
}

struct RunOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::ostream* log = &std::cout;
  std::ostream* err = &std::cerr;
};

class RunContext {
 public:
  RunContext(std::string command, ExperimentConfig cfg, std::filesystem::path out, unsigned jobs)
      : command_(std::move(command)), cfg_(std::move(cfg)), outputs_(std::move(out)), jobs_(jobs),
        start_(std::chrono::steady_clock::now()) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  io::OutputSet& outputs() { return outputs_; }
  unsigned jobs() const { return jobs_; }
  io::Json& tolerances() { return tolerances_; }
  io::Json& results() { return results_; }

  /// Runs `fn` as stage `name`. Library config errors are anchored at
  /// `anchor` in the config file; every other error becomes a StageError.
  template <class F>
  auto stage(const std::string& name, const std::string& anchor, F&& fn) -> decltype(fn()) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Timer {
      RunContext* ctx;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Timer() {
        ctx->timing_[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } timer{this, name, t0};
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const ConfigError& e) {
      if (is_anchored(e.what())) throw;
      cfg_.doc.fail(anchor, e.what());
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  }

  io::Json manifest() const {
    io::Json m;
    m["artifact"] = "orbitcurv";
    m["version"] = kVersion;
    m["command"] = command_;
    m["config"] = cfg_.doc.source;
    m["config_hash"] = io::fnv1a_hex(cfg_.doc.text);
    m["seed"] = cfg_.seed;
    m["jobs"] = jobs_;
    m["tolerances"] = tolerances_.is_null() ? io::Json::object() : tolerances_;
    m["results"] = results_.is_null() ? io::Json::object() : results_;
    auto files = outputs_.names();
    files.push_back("manifest.json");
    m["files"] = files;
    io::Json timing;
    timing["total_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::Json stages = io::Json::object();
    for (const auto& [k, v] : timing_) stages[k] = v;
    timing["stages"] = stages;
    m["timing"] = timing;
    return m;
  }

  void commit() {
    outputs_.add_json("manifest.json", manifest());
    stage("write", "", [&] {
      outputs_.commit();
      return 0;
    });
  }

 private:
  std::string command_;
  ExperimentConfig cfg_;
  io::OutputSet outputs_;
  unsigned jobs_;
  std::chrono::steady_clock::time_point start_;
  io::Json tolerances_, results_;
  std::map<std::string, double> timing_;
};

// ---------------------------------------------------------------------------
// Builders.

inline WarpedManifold build_manifold(const ManifoldSpec& s) {
  Profile p = Profile::constant(s.value);
  if (s.profile == "linear") p = Profile::linear(s.slope, s.offset);
  else if (s.profile == "sin") p = Profile::sin();
  else if (s.profile == "cosh") p = Profile::cosh();
  else if (s.profile == "sinh") p = Profile::sinh();
  else if (s.profile == "spline") p = Profile::spline(s.knots, s.values);
  return WarpedManifold(s.u_min, s.u_max, std::move(p), s.fiber_dim, s.fiber_period, s.clamp_fraction);
}

inline QuotientGrid build_grid(const WarpedManifold& mf, const ExperimentConfig& cfg) {
  const double lo = cfg.grid_lo.value_or(mf.support_lo());
  const double hi = cfg.grid_hi.value_or(mf.support_hi());
  return QuotientGrid::uniform(mf, lo, hi, cfg.n_u);
}

/// Density on M with respect to vol (before normalization) from a preset.
inline AbsContMeasure build_density(const WarpedManifold& mf, const QuotientGrid& grid,
                                    const FiberGrid& fiber, const DensitySpec& d, std::uint64_t seed) {
  if (d.source == "volume") return uniform_band(mf, grid, fiber, grid.front(), grid.back());
  if (d.source == "uniform_band") return uniform_band(mf, grid, fiber, d.lo, d.hi);
  if (d.source == "gaussian") return gaussian_on_quotient(mf, grid, fiber, d.center, d.sigma);
  if (d.source == "two_bump") return two_bump(mf, grid, fiber, d.c0, d.c1, d.sigma);
  if (d.source == "random") return random_density(mf, grid, fiber, seed, d.modes);
  throw ConfigError("unsupported density source '" + d.source + "'");
}

/// Reads (u, theta, rho) triples on a full tensor grid; fiber dimension 1.
inline AbsContMeasure read_density_csv(const WarpedManifold& mf, const std::filesystem::path& file) {
  if (mf.fiber_dim() != 1) throw ConfigError("csv density source supports fiber_dim 1 only");
  const auto table = io::read_numeric_csv(file, 3);
  if (table.rows.empty()) throw ConfigError(file.string() + ":1: no data rows");
  std::vector<double> us, ts;
  for (const auto& r : table.rows) {
    us.push_back(r[0]);
    ts.push_back(r[1]);
  }
  auto uniq = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v) {
      if (out.empty() || std::abs(x - out.back()) > 1e-12 * std::max(1.0, std::abs(x))) out.push_back(x);
    }
    return out;
  };
  const auto u = uniq(us);
  const auto t = uniq(ts);
  const std::string where = file.string() + ":" + std::to_string(table.lines.front()) + ": ";
  if (u.size() < 16 || t.size() < 16) throw ConfigError(where + "grid needs >= 16 distinct u and theta values");
  if (u.size() * t.size() != table.rows.size()) {
    throw ConfigError(where + "rows do not form a full (u, theta) tensor grid");
  }
  const auto grid = QuotientGrid::uniform(u.front(), u.back(), u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::abs(grid[i] - u[i]) > 1e-9 * std::max(1.0, mf.length())) {
      throw ConfigError(where + "u values are not uniformly spaced");
    }
  }
  const FiberGrid fiber(1, t.size(), mf.fiber_period());
  for (std::size_t j = 0; j < t.size(); ++j) {
    if (std::abs(fiber.angles(j)[0] - t[j]) > 1e-9) {
      throw ConfigError(where + "theta values must be k * period / n for k = 0..n-1");
    }
  }
  std::vector<double> rho(u.size() * t.size(), -1.0);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto i = static_cast<std::size_t>(std::llround((row[0] - grid.front()) / grid.spacing()));
    const auto j = static_cast<std::size_t>(std::llround(row[1] / fiber.step()));
    const std::string at = file.string() + ":" + std::to_string(table.lines[r]) + ": ";
    if (i >= u.size() || j >= t.size()) throw ConfigError(at + "point is off the grid");
    if (rho[i * t.size() + j] >= 0) throw ConfigError(at + "duplicate (u, theta) point");
    if (!(row[2] >= 0) || !std::isfinite(row[2])) throw ConfigError(at + "density must be finite and >= 0");
    rho[i * t.size() + j] = row[2];
  }
  if (!mf.inside(grid.front()) || !mf.inside(grid.back())) {
    throw ConfigError(where + "u grid leaves the principal stratum");
  }
  AbsContMeasure m(mf, grid, fiber, std::move(rho));
  m.normalize();
  return m;
}

/// Quotient measure (density with respect to pi_* vol) from a preset.
inline QuotientMeasure build_quotient_density(const WarpedManifold& mf, const QuotientGrid& grid,
                                              const DensitySpec& d) {
  const double tol = 1e-12 * std::max(1.0, mf.length());
  std::function<double(double)> q;
  if (d.source == "volume") {
    q = [](double) { return 1.0; };
  } else if (d.source == "uniform_band") {
    q = [&](double u) { return (u >= d.lo - tol && u <= d.hi + tol) ? 1.0 : 0.0; };
  } else if (d.source == "gaussian") {
    q = [&](double u) {
      const double z = (u - d.center) / d.sigma;
      return std::exp(-0.5 * z * z) / quotient_volume_density(mf, u);
    };
  } else if (d.source == "two_bump") {
    q = [&](double u) {
      const double z0 = (u - d.c0) / d.sigma, z1 = (u - d.c1) / d.sigma;
      return (std::exp(-0.5 * z0 * z0) + std::exp(-0.5 * z1 * z1)) / quotient_volume_density(mf, u);
    };
  } else if (d.source == "bump") {
    q = [&](double u) { return bump((u - d.center) / d.radius, d.power) / quotient_volume_density(mf, u); };
  } else {
    throw ConfigError("unsupported quotient density source '" + d.source + "'");
  }
  std::vector<double> dens(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) dens[i] = q(grid[i]);
  return make_quotient_measure(mf, grid, dens, true);
}

inline io::Json grid_json(const QuotientGrid& g) {
  return {{"n_u", g.size()}, {"lo", g.front()}, {"hi", g.back()}, {"spacing", g.spacing()}};
}

// ---------------------------------------------------------------------------
// Commands.

inline int cmd_disintegrate(RunContext& ctx) {
  const auto& cfg = ctx.cfg();
  if (!cfg.density) cfg.doc.fail("", "missing required section 'density'");
  const DensitySpec& ds = *cfg.density;

  const auto mf = ctx.stage("geometry", "manifold", [&] { return build_manifold(cfg.manifold); });
  const FiberGrid fiber = FiberGrid::for_manifold(mf, cfg.n_theta);
  AbsContMeasure mu;
  double raw_mass = 0;
  if (ds.source == "csv") {
    std::filesystem::path p = ds.path;
    if (p.is_relative()) p = std::filesystem::path(cfg.doc.source).parent_path() / p;
    mu = ctx.stage("measures", ds.anchor, [&] { return read_density_csv(mf, p); });
    raw_mass = mu.mass();
  } else {
    mu = ctx.stage("measures", ds.anchor, [&] {
      const auto grid = build_grid(mf, cfg);
      auto m = build_density(mf, grid, fiber, ds, cfg.seed);
      return m;
    });
    raw_mass = mu.mass();
  }

  const auto grid = mu.grid();
  const auto& fib = mu.fiber();
  const std::size_t nf = fib.size();

  // Volume identity: sum over orbits of the orbit volume equals vol of the band.
  const double band_volume = dot(std::span<const double>(mu.volume_weight()),
                                 std::vector<double>(grid.size(), 1.0));

  const auto dis = ctx.stage("measures", ds.anchor, [&] { return disintegrate(mu); });
  const auto glued = ctx.stage("measures", ds.anchor, [&] { return glue(dis, mf); });

  double gluing = 0;
  for (std::size_t k = 0; k < mu.values().size(); ++k) {
    gluing = std::max(gluing, std::abs(glued.values()[k] - mu.values()[k]));
  }
  double uniform_defect = 0;
  for (const auto& c : dis.conditionals) {
    for (double v : c.density) uniform_defect = std::max(uniform_defect, std::abs(v - 1.0));
  }
  double cond_mass_defect = 0;
  for (const auto& c : dis.conditionals) cond_mass_defect = std::max(cond_mass_defect, std::abs(c.mass() - 1.0));

  // Exports.
  std::vector<std::string> head{"u"};
  for (int d = 0; d < fib.dim(); ++d) head.push_back(fib.dim() == 1 ? "theta" : "theta" + std::to_string(d + 1));
  std::vector<std::string> dens_head = head;
  dens_head.push_back("rho");
  std::vector<std::string> cond_head = head;
  cond_head.push_back("conditional");
  io::CsvWriter dens(dens_head), cond(cond_head);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = 0; j < nf; ++j) {
      std::vector<std::string> cells{io::format_double(grid[i])};
      for (double a : fib.angles(j)) cells.push_back(io::format_double(a));
      auto c2 = cells;
      cells.push_back(io::format_double(mu.at(i, j)));
      c2.push_back(io::format_double(dis.conditionals[i].density[j]));
      dens.row_strings(cells);
      cond.row_strings(c2);
    }
  }
  io::CsvWriter quot({"u", "q", "q_du", "degenerate"});
  std::vector<char> degenerate(grid.size(), 0);
  for (auto i : dis.degenerate_orbits) degenerate[i] = 1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    quot.row(grid[i], dis.marginal.density[i], dis.marginal.density_du(i), degenerate[i] != 0);
  }

  io::Json meta;
  meta["grid"] = grid_json(grid);
  meta["grid"]["n_theta"] = fib.per_dim();
  meta["grid"]["fiber_dim"] = fib.dim();
  meta["grid"]["fiber_period"] = fib.period();
  meta["mass"] = mu.mass();
  meta["raw_mass"] = raw_mass;
  meta["flags"] = {{"normalized", true}, {"degenerate_orbits", dis.degenerate_orbits}};

  io::Json rep;
  rep["command"] = "disintegrate";
  rep["source"] = ds.source;
  rep["grid"] = meta["grid"];
  rep["gluing_residual"] = gluing;
  rep["mass"] = mu.mass();
  rep["marginal_mass"] = dis.marginal.mass();
  rep["band_volume"] = band_volume;
  rep["conditional_mass_defect"] = cond_mass_defect;
  rep["uniform_conditional_defect"] = uniform_defect;
  rep["degenerate_orbits"] = dis.degenerate_orbits;
  rep["marginal"] = {{"u", std::vector<double>(grid.nodes().begin(), grid.nodes().end())},
                     {"q", dis.marginal.density}};

  auto& out = ctx.outputs();
  out.add("density.csv", dens.str());
  out.add_json("density_meta.json", meta);
  out.add("quotient.csv", quot.str());
  out.add("conditionals.csv", cond.str());
  out.add_json("report.json", rep);
  ctx.tolerances() = {{"mass_normalization", 1e-9}, {"gluing_residual_target", 1e-10}};
  ctx.results() = {{"gluing_residual", gluing},
                   {"band_volume", band_volume},
                   {"uniform_conditional_defect", uniform_defect},
                   {"degenerate_orbits", dis.degenerate_orbits.size()}};
  ctx.commit();
  return kOk;
}

inline int cmd_transport(RunContext& ctx, std::ostream& log) {
  const auto& cfg = ctx.cfg();
  if (!cfg.transport) cfg.doc.fail("", "missing required section 'transport'");
  const auto& ts = *cfg.transport;
  const auto mf = ctx.stage("geometry", "manifold", [&] { return build_manifold(cfg.manifold); });
  const auto grid = ctx.stage("geometry", "grid", [&] { return build_grid(mf, cfg); });
  const auto mu0 = ctx.stage("measures", ts.source.anchor, [&] { return build_quotient_density(mf, grid, ts.source); });
  const auto mu1 = ctx.stage("measures", ts.target.anchor, [&] { return build_quotient_density(mf, grid, ts.target); });

  const auto times = uniform_times(ts.n_time);
  struct Result {
    MongeMap map;
    DisplacementPath path;
    double w2sq, geo, endpoint;
  };
  const Result r = ctx.stage("transport", "transport", [&] {
    Result res;
    res.map = quantile_monge(mu0, mu1);
    if (!res.map.is_monotone()) throw CausticError("recovered map is not monotone");
    res.path = displacement_interpolate(mf, mu0, res.map, times);
    res.w2sq = w2_squared(cdf_of(mu0), cdf_of(mu1));
    res.geo = geodesic_defect(res.path);
    res.endpoint = endpoint_mass_defect(res.path.steps.back(), mu1);
    return res;
  });

  io::Json rep;
  rep["command"] = "transport";
  rep["grid"] = grid_json(grid);
  rep["w2"] = std::sqrt(std::max(0.0, r.w2sq));
  rep["w2_squared"] = r.w2sq;
  rep["geodesic_defect"] = r.geo;
  rep["endpoint_mass_defect"] = r.endpoint;
  double jmin = std::numeric_limits<double>::infinity();
  for (const auto& s : r.path.steps) {
    for (std::size_t i = 0; i < s.jacobian.size(); ++i) {
      if (mu0.density[i] > 0) jmin = std::min(jmin, s.jacobian[i]);
    }
  }
  rep["min_jacobian"] = jmin;
  {
    io::Json series = io::Json::array();
    const Cdf1D start = r.path.steps.front().as_cdf();
    const double total = std::sqrt(std::max(0.0, r.w2sq));
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double w = std::sqrt(std::max(0.0, w2_squared(start, r.path.steps[k].as_cdf())));
      series.push_back({{"t", times[k]}, {"w2_from_start", w}, {"expected", times[k] * total}});
    }
    rep["geodesic_series"] = series;
  }

  io::CsvWriter map_csv({"u", "T", "grad_psi", "psi", "slope"});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    map_csv.row(grid[i], r.map.image[i], r.map.gradient[i], r.map.potential[i], r.map.slope[i]);
  }
  io::CsvWriter jac_csv({"t", "u", "y", "jacobian", "density"});
  io::Json path_json = io::Json::array();
  for (const auto& s : r.path.steps) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      jac_csv.row(s.t, grid[i], s.position[i], s.jacobian[i], s.density[i]);
    }
    path_json.push_back({{"t", s.t}, {"nodes", s.position}, {"densities", s.density}, {"jacobians", s.jacobian}});
  }

  auto& out = ctx.outputs();
  if (ts.lp) {
    const auto lp = ctx.stage("transport", "transport.lp", [&] {
      const auto g = QuotientGrid::uniform(mf, grid.front(), grid.back(), ts.lp_atoms);
      const auto a = atoms_of(build_quotient_density(mf, g, ts.source));
      const auto b_sorted = atoms_of(build_quotient_density(mf, g, ts.target));
      // The target atoms reach the solver in a seeded random order.
      std::vector<std::size_t> perm(b_sorted.position.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(cfg.seed);
      std::shuffle(perm.begin(), perm.end(), rng);
      Atoms b;
      for (std::size_t k : perm) {
        b.position.push_back(b_sorted.position[k]);
        b.weight.push_back(b_sorted.weight[k]);
      }
      const auto cost = squared_distance_cost(a.position, b.position);
      auto res = kantorovich_lp(a.weight, b.weight, cost);
      for (auto& e : res.plan.entries) e.target = perm[e.target];
      const double q = w2_squared_atoms(a, b_sorted);
      io::Json j;
      j["atoms"] = ts.lp_atoms;
      j["quantile_w2_squared"] = q;
      j["lp_cost"] = res.cost;
      j["abs_difference"] = std::abs(q - res.cost);
      j["marginal_defect"] = res.plan.marginal_defect(a.weight, b_sorted.weight);
      j["pivots"] = res.pivots;
      io::CsvWriter plan({"source", "target", "weight"});
      auto entries = res.plan.entries;
      std::sort(entries.begin(), entries.end(), [](const PlanEntry& x, const PlanEntry& y) {
        return x.source != y.source ? x.source < y.source : x.target < y.target;
      });
      for (const auto& e : entries) plan.row(e.source, e.target, e.weight);
      return std::make_pair(j, plan.str());
    });
    rep["lp"] = lp.first;
    out.add("plan.csv", lp.second);
    log << "lp check: |quantile - LP| = " << io::format_double(lp.first["abs_difference"].get<double>()) << "\n";
  }
  log << "W2 = " << io::format_double(rep["w2"].get<double>())
      << ", geodesic defect = " << io::format_double(r.geo) << "\n";

  out.add("map.csv", map_csv.str());
  out.add("jacobians.csv", jac_csv.str());
  out.add_json("path.json", path_json);
  out.add_json("report.json", rep);
  ctx.tolerances() = {{"caustic_jacobian", 1e-12}, {"lp_mass_balance", 1e-9}, {"n_time", ts.n_time}};
  ctx.results() = {{"w2", rep["w2"]}, {"geodesic_defect", r.geo}, {"endpoint_mass_defect", r.endpoint}};
  if (ts.lp) ctx.results()["lp_abs_difference"] = rep["lp"]["abs_difference"];
  ctx.commit();
  return kOk;
}

inline io::Json sample_json(const KSample& s, std::optional<double> k) {
  io::Json j{{"id", s.id},         {"geodesic", s.geodesic}, {"theta", s.theta},
             {"t", s.t},           {"center", s.center},     {"radius", s.radius},
             {"speed", s.speed},   {"chord_gap", s.chord_gap}, {"lambda_green", s.lambda_green},
             {"k_est", s.skipped ? io::Json(nullptr) : io::Json(s.k_est)},
             {"skipped", s.skipped}};
  if (!s.note.empty()) j["note"] = s.note;
  if (k) j["residual"] = ConvexityReport::residual(s, *k);
  return j;
}

inline int cmd_certify(RunContext& ctx, std::ostream& log) {
  const auto& cfg = ctx.cfg();
  if (!cfg.certify) cfg.doc.fail("", "missing required section 'certify'");
  const auto& cs = *cfg.certify;
  const auto mf = ctx.stage("geometry", "manifold", [&] { return build_manifold(cfg.manifold); });
  const auto rep = ctx.stage("convexity", "certify.sampler",
                             [&] { return estimate_k(mf, cs.sampler, cs.k, cs.tolerance, ctx.jobs()); });

  io::Json j;
  j["command"] = "certify";
  j["requested_k"] = cs.k ? io::Json(*cs.k) : io::Json("estimate");
  j["tolerance"] = cs.tolerance;
  j["k_inf"] = rep.k_inf;
  j["ricci_min"] = rep.ricci_min;
  j["ricci_max"] = rep.ricci_max;
  j["pass"] = rep.pass;
  j["skipped"] = rep.skipped;
  j["sample_count"] = rep.samples.size();
  j["witness"] = sample_json(rep.samples[rep.witness], cs.k);
  j["sampler"] = {{"count", cs.sampler.count},
                  {"support_radius", cs.sampler.support_radius},
                  {"max_separation", cs.sampler.max_separation},
                  {"thetas", cs.sampler.thetas},
                  {"t_values", cs.sampler.t_values},
                  {"n_u", cs.sampler.n_u},
                  {"n_time", cs.sampler.n_time},
                  {"seed", cs.sampler.seed}};
  io::Json samples = io::Json::array();
  io::CsvWriter csv({"id", "geodesic", "theta", "t", "center", "radius", "speed", "chord_gap",
                     "lambda_green", "k_est", "skipped"});
  for (const auto& s : rep.samples) {
    samples.push_back(sample_json(s, cs.k));
    csv.row(s.id, s.geodesic, s.theta, s.t, s.center, s.radius, s.speed, s.chord_gap, s.lambda_green,
            s.skipped ? std::nan("") : s.k_est, s.skipped);
  }
  j["samples"] = samples;

  auto& out = ctx.outputs();
  if (cs.taylor) {
    const auto diag = ctx.stage("convexity", "certify.taylor", [&] {
      const double base = cs.taylor_base.value_or(0.5 * (mf.u_min() + mf.u_max()));
      return taylor_check(mf, base, cs.taylor_speed, cs.taylor_cfg);
    });
    io::Json t;
    t["base"] = diag.base;
    t["ricci"] = diag.ricci;
    t["t"] = cs.taylor_cfg.t;
    t["width"] = cs.taylor_cfg.proportional_width ? "proportional" : "fixed";
    t["remainder_exponent"] = diag.remainder_exponent ? io::Json(*diag.remainder_exponent) : io::Json(nullptr);
    t["d_exponent"] = diag.d_exponent ? io::Json(*diag.d_exponent) : io::Json(nullptr);
    t["ratio_at_smallest"] = diag.ratio_at_smallest ? io::Json(*diag.ratio_at_smallest) : io::Json(nullptr);
    io::Json rows = io::Json::array();
    io::CsvWriter tcsv({"theta", "D", "P", "riccati_defect"});
    for (const auto& r : diag.rows) {
      rows.push_back({{"theta", r.theta}, {"D", r.d}, {"P", r.p}, {"riccati_defect", r.riccati}});
      tcsv.row(r.theta, r.d, r.p, r.riccati);
    }
    t["rows"] = rows;
    j["taylor"] = t;
    out.add("taylor.csv", tcsv.str());
  }

  out.add_json("report.json", j);
  out.add("k_samples.csv", csv.str());
  ctx.tolerances() = {{"certify_tolerance", cs.tolerance},
                      {"min_lambda", cs.sampler.min_lambda},
                      {"caustic_jacobian", 1e-12}};
  ctx.results() = {{"k_inf", rep.k_inf}, {"pass", rep.pass}, {"ricci_min", rep.ricci_min},
                   {"ricci_max", rep.ricci_max}};
  ctx.commit();

  log << "K_inf = " << io::format_double(rep.k_inf) << " (horizontal Ricci in ["
      << io::format_double(rep.ricci_min) << ", " << io::format_double(rep.ricci_max) << "])\n";
  if (!cs.k) return kOk;
  if (rep.pass) {
    log << "PASS: K_inf >= " << io::format_double(*cs.k) << " - " << io::format_double(cs.tolerance) << "\n";
    return kOk;
  }
  const auto& w = rep.samples[rep.witness];
  log << "FAIL: K_inf < " << io::format_double(*cs.k) << " - " << io::format_double(cs.tolerance) << "\n"
      << "witness: sample " << w.id << " (geodesic " << w.geodesic << ", theta " << io::format_double(w.theta)
      << ", t " << io::format_double(w.t) << ", center " << io::format_double(w.center)
      << ") K_est = " << io::format_double(w.k_est)
      << ", residual at K = " << io::format_double(ConvexityReport::residual(w, *cs.k)) << "\n";
  return kCertifyFail;
}

/// Plot-ready CSV series from a completed run directory.
inline int cmd_report(const std::filesystem::path& dir, std::ostream& log, std::ostream& err) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    err << manifest_path.string() << ":1: missing manifest; run disintegrate, transport or certify first\n";
    return kBadInput;
  }
  io::Json manifest, rep;
  try {
    manifest = io::Json::parse(io::read_file(manifest_path));
    rep = io::Json::parse(io::read_file(dir / "report.json"));
  } catch (const std::exception& e) {
    err << manifest_path.string() << ":1: unreadable run directory: " << e.what() << "\n";
    return kBadInput;
  }
  io::OutputSet out(dir);
  try {
    const std::string command = manifest.value("command", "");
    if (command == "certify") {
      io::CsvWriter hist({"id", "geodesic", "theta", "t", "k_est"});
      std::vector<double> ks;
      std::map<double, std::vector<const io::Json*>> by_t;
      for (const auto& s : rep.at("samples")) {
        if (s.at("skipped").get<bool>()) continue;
        const double k = s.at("k_est").get<double>();
        ks.push_back(k);
        hist.row(s.at("id").get<std::size_t>(), s.at("geodesic").get<std::size_t>(),
                 s.at("theta").get<double>(), s.at("t").get<double>(), k);
        by_t[s.at("t").get<double>()].push_back(&s);
      }
      out.add("k_histogram.csv", hist.str());
      io::CsvWriter bins({"bin_lo", "bin_hi", "count"});
      if (!ks.empty()) {
        const double lo = *std::min_element(ks.begin(), ks.end());
        const double hi = *std::max_element(ks.begin(), ks.end());
        const std::size_t nb = 20;
        const double w = hi > lo ? (hi - lo) / nb : 1.0;
        std::vector<std::size_t> cnt(nb, 0);
        for (double k : ks) cnt[std::min(nb - 1, static_cast<std::size_t>((k - lo) / w))]++;
        for (std::size_t b = 0; b < nb; ++b) bins.row(lo + b * w, lo + (b + 1) * w, cnt[b]);
      }
      out.add("k_bins.csv", bins.str());
      const bool has_k = rep.at("requested_k").is_number();
      const double kreq = has_k ? rep.at("requested_k").get<double>() : rep.at("k_inf").get<double>();
      io::CsvWriter rt({"t", "samples", "k_min", "k_mean", "k_max", "residual_min"});
      for (const auto& [t, list] : by_t) {
        double kmin = std::numeric_limits<double>::infinity(), kmax = -kmin, sum = 0, rmin = kmin;
        for (const auto* s : list) {
          const double k = s->at("k_est").get<double>();
          kmin = std::min(kmin, k);
          kmax = std::max(kmax, k);
          sum += k;
          rmin = std::min(rmin, s->at("chord_gap").get<double>() - kreq * s->at("lambda_green").get<double>());
        }
        rt.row(t, list.size(), kmin, sum / static_cast<double>(list.size()), kmax, rmin);
      }
      out.add("residual_vs_t.csv", rt.str());
      if (rep.contains("taylor")) {
        io::CsvWriter ts({"theta", "D", "P", "D_over_theta2", "P_over_theta2", "ratio", "remainder"});
        for (const auto& r : rep["taylor"]["rows"]) {
          const double th = r.at("theta").get<double>(), d = r.at("D").get<double>(), p = r.at("P").get<double>();
          ts.row(th, d, p, d / (th * th), p / (th * th), p != 0 ? d / p : std::nan(""), std::abs(d - p));
        }
        out.add("taylor_scaling.csv", ts.str());
      }
    } else if (command == "transport") {
      io::CsvWriter g({"t", "w2_from_start", "expected"});
      for (const auto& s : rep.at("geodesic_series")) {
        g.row(s.at("t").get<double>(), s.at("w2_from_start").get<double>(), s.at("expected").get<double>());
      }
      out.add("geodesic_series.csv", g.str());
    } else if (command == "disintegrate") {
      io::CsvWriter g({"u", "q"});
      const auto& u = rep.at("marginal").at("u");
      const auto& q = rep.at("marginal").at("q");
      for (std::size_t i = 0; i < u.size(); ++i) g.row(u[i].get<double>(), q[i].get<double>());
      out.add("marginal_series.csv", g.str());
    } else {
      err << manifest_path.string() << ":1: manifest names unknown command '" << command << "'\n";
      return kBadInput;
    }
    manifest["report_files"] = out.names();
    out.add_json("manifest.json", manifest);
    out.commit();
  } catch (const std::exception& e) {
    err << "error: stage 'report': " << e.what() << "\n";
    return kStageError;
  }
  for (const auto& n : out.names()) log << "wrote " << (dir / n).string() << "\n";
  return kOk;
}

/// Entry point shared by the tool and the tests.
inline int run_command(const std::string& command, const RunOptions& opt) {
  std::ostream& log = *opt.log;
  std::ostream& err = *opt.err;
  if (command == "report") {
    std::filesystem::path dir;
    if (opt.out) {
      dir = *opt.out;
    } else if (!opt.config.empty()) {
      try {
        const auto cfg = parse_experiment(io::load_config(opt.config), opt.seed);
        if (!cfg.out || cfg.out->empty()) {
          err << opt.config.string() << ":1: no output directory (use --out or the 'out' key)\n";
          return kBadInput;
        }
        dir = std::filesystem::path(*cfg.out);
      } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return kBadInput;
      }
    } else {
      err << "report: need --out DIR or --config PATH\n";
      return kBadInput;
    }
    return cmd_report(dir, log, err);
  }
  if (command != "disintegrate" && command != "transport" && command != "certify") {
    err << "unknown command '" << command << "'\n";
    return kBadInput;
  }
  try {
    if (opt.config.empty()) {
      err << "missing --config PATH\n";
      return kBadInput;
    }
    auto cfg = parse_experiment(io::load_config(opt.config), opt.seed);
    std::filesystem::path out;
    if (opt.out) out = *opt.out;
    else if (cfg.out && !cfg.out->empty()) out = *cfg.out;
    else {
      err << opt.config.string() << ":1: no output directory (use --out or the 'out' key)\n";
      return kBadInput;
    }
    RunContext ctx(command, std::move(cfg), out, opt.jobs);
    if (command == "disintegrate") return cmd_disintegrate(ctx);
    if (command == "transport") return cmd_transport(ctx, log);
    return cmd_certify(ctx, log);
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return kBadInput;
  } catch (const StageError& e) {
    err << "error: " << e.what() << "\n";
    return kStageError;
  } catch (const std::exception& e) {
    err << "error: stage 'pipeline': " << e.what() << "\n";
    return kStageError;
  }
}

}  // namespace orbitcurv::pipeline
