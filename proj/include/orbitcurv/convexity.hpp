#pragma once

// Displacement convexity of the orbit entropy and the curvature bound it
// certifies.
//
//   U_N(r)        = -N (r^(1 - 1/N) - r)
//   H(mu)         = int U_N(rho) d(ref)
//   Lambda_N(mu,v)= int |v|^2 rho^(1 - 1/N) d(ref)
//   R(t, K)       = (1-t) H(mu_0) + t H(mu_1) - H(mu_t)
//                   - K int_0^1 Lambda_N(mu_s, grad psi_s) G(s, t) ds
//
// H is locally K Lambda_N-displacement convex iff R >= 0 along localized
// geodesics, and the best K is the ratio of the chord gap to the
// Green-weighted Lambda integral.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "orbitcurv/errors.hpp"
#include "orbitcurv/geometry.hpp"
#include "orbitcurv/measures.hpp"
#include "orbitcurv/parallel.hpp"
#include "orbitcurv/quadrature.hpp"
#include "orbitcurv/transport.hpp"

namespace orbitcurv {

/// Green kernel of -d^2/ds^2 on [0, 1] with Dirichlet conditions.
inline double green_kernel(double s, double t) {
  if (s < 0 || s > 1 || t < 0 || t > 1) throw DomainError("green_kernel: arguments must lie in [0, 1]");
  return s <= t ? s * (1 - t) : t * (1 - s);
}

/// U_N(r) = -N (r^(1-1/N) - r). U_N(0) = 0 and delta -> delta^N U_N(delta^-N)
/// is affine with slope -N.
inline double u_entropy(double r, int dim) {
  if (r < 0) throw DomainError("u_entropy: r must be >= 0");
  if (dim < 1) throw DomainError("u_entropy: N must be >= 1");
  if (r == 0) return 0.0;
  const double n = dim;
  return -n * (std::pow(r, 1.0 - 1.0 / n) - r);
}

/// Reference measure on an orbit: vol_0 or nu_0, as quadrature weights.
struct EnergyConfig {
  int dim = 2;
  /// Density of the reference with respect to vol_0 on the fiber grid.
  OrbitConditional reference;

  static EnergyConfig uniform(int dim, const FiberGrid& fiber) {
    return EnergyConfig{dim, uniform_conditional(fiber)};
  }

  std::vector<double> weights() const {
    std::vector<double> w(reference.density);
    const double n = static_cast<double>(w.size());
    for (double& x : w) x /= n;
    return w;
  }
};

/// Quadrature of U_N(rho) against reference weights.
inline double h_functional(std::span<const double> rho, std::span<const double> weights, int dim) {
  if (rho.size() != weights.size()) throw ShapeError("h_functional: density/weight size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (rho[i] < 0) throw DomainError("h_functional: negative density");
    s += weights[i] * u_entropy(rho[i], dim);
  }
  return s;
}

/// H of an orbit measure whose density (with respect to cfg.reference) is `rho`.
inline double h_functional(const OrbitConditional& rho, const EnergyConfig& cfg) {
  const auto w = cfg.weights();
  return h_functional(rho.density, w, cfg.dim);
}

/// Quadrature of |v|^2 rho^(1-1/N) against reference weights.
inline double lambda_form(std::span<const double> rho, std::span<const double> speed,
                          std::span<const double> weights, int dim) {
  if (rho.size() != speed.size() || rho.size() != weights.size()) {
    throw ShapeError("lambda_form: shape mismatch");
  }
  const double e = 1.0 - 1.0 / dim;
  double s = 0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (rho[i] > 0) s += weights[i] * speed[i] * speed[i] * std::pow(rho[i], e);
  }
  return s;
}

inline double lambda_form(const OrbitConditional& rho, std::span<const double> speed,
                          const EnergyConfig& cfg) {
  const auto w = cfg.weights();
  return lambda_form(rho.density, speed, w, cfg.dim);
}

// ---------------------------------------------------------------------------
// Functionals along a displacement path. Densities are with respect to vol of
// M restricted to orbit-invariant measures, i.e. with respect to pi_* vol.

/// H(mu_t) evaluated directly on the moved nodes.
inline double path_energy(const DisplacementPath& path, std::size_t k) {
  const auto& s = path.steps[k];
  return h_functional(s.density, s.volume_weight, path.dim);
}

/// H(mu_t) = int U_N(rho_0 / J) J dvol evaluated on the base nodes.
inline double path_energy_jacobian_form(const DisplacementPath& path, std::size_t k) {
  const auto& s = path.steps[k];
  const auto& base = path.base;
  double acc = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (!(base.density[i] > 0)) continue;
    const double j = s.jacobian[i];
    acc += base.volume_weight[i] * u_entropy(base.density[i] / j, path.dim) * j;
  }
  return acc;
}

/// Lambda_N(mu_s, grad psi_s) with |grad psi_s| the constant particle speed.
inline double path_lambda(const DisplacementPath& path, std::size_t k) {
  const auto& s = path.steps[k];
  std::vector<double> speed(s.density.size());
  for (std::size_t i = 0; i < speed.size(); ++i) speed[i] = path.speed(i);
  return lambda_form(s.density, speed, s.volume_weight, path.dim);
}

/// int rho_s^(1-1/N) dvol on the moved nodes.
inline double path_mass_power(const DisplacementPath& path, std::size_t k) {
  const auto& s = path.steps[k];
  std::vector<double> one(s.density.size(), 1.0);
  return lambda_form(s.density, one, s.volume_weight, path.dim);
}

/// int_0^1 g(s) G(s, t) ds by the trapezoid rule on the path's time grid.
/// t must be a grid time so the kink of G falls on a node.
inline double green_integral(std::span<const double> times, std::span<const double> values, double t) {
  if (times.size() != values.size() || times.size() < 2) throw ShapeError("green_integral: shape mismatch");
  bool on_grid = false;
  for (double s : times) on_grid = on_grid || std::abs(s - t) <= 1e-12;
  if (!on_grid) throw DomainError("green_integral: t must be a node of the time grid");
  double acc = 0;
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    const double a = values[k] * green_kernel(times[k], t);
    const double b = values[k + 1] * green_kernel(times[k + 1], t);
    acc += 0.5 * (times[k + 1] - times[k]) * (a + b);
  }
  return acc;
}

struct ResidualTerms {
  double t = 0;
  /// (1-t) H(mu_0) + t H(mu_1) - H(mu_t).
  double chord_gap = 0;
  /// int_0^1 Lambda_N(mu_s, grad psi_s) G(s, t) ds.
  double lambda_green = 0;

  double residual(double k) const { return chord_gap - k * lambda_green; }
};

/// Chord gap and Green-weighted Lambda integral at every requested time.
inline std::vector<ResidualTerms> residual_terms(const DisplacementPath& path,
                                                 std::span<const double> ts) {
  const std::size_t nt = path.times.size();
  std::vector<double> energy(nt), lambda(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    energy[k] = path_energy(path, k);
    lambda[k] = path_lambda(path, k);
  }
  std::vector<ResidualTerms> out;
  out.reserve(ts.size());
  for (double t : ts) {
    const std::size_t k = path.time_index(t);
    ResidualTerms r;
    r.t = path.times[k];
    r.chord_gap = (1 - r.t) * energy.front() + r.t * energy.back() - energy[k];
    r.lambda_green = green_integral(path.times, lambda, r.t);
    out.push_back(r);
  }
  return out;
}

/// R(t, K); convexity at level K along this path and time iff R >= 0.
inline double convexity_residual(const DisplacementPath& path, double t, double k) {
  const double ts[] = {t};
  return residual_terms(path, ts).front().residual(k);
}

// ---------------------------------------------------------------------------
// Curvature estimation.

struct SamplerConfig {
  std::size_t count = 200;
  /// Support radius as a fraction of |I|.
  double support_radius = 0.1;
  /// Largest unscaled endpoint separation as a fraction of |I|.
  double max_separation = 0.2;
  std::vector<double> thetas{0.1, 0.05};
  std::vector<double> t_values{0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875};
  std::uint64_t seed = 1;
  std::size_t n_u = 256;
  std::size_t n_time = 32;
  /// Interval the supports must stay in; defaults to the clamped principal stratum.
  std::optional<double> region_lo, region_hi;
  int bump_power = 4;
  /// Guard on the Lambda integral below which a sample is skipped.
  double min_lambda = 1e-14;
};

struct KSample {
  std::size_t id = 0;
  std::size_t geodesic = 0;
  double theta = 0;
  double t = 0;
  double center = 0;
  double radius = 0;
  double speed = 0;
  double chord_gap = 0;
  double lambda_green = 0;
  double k_est = 0;
  bool skipped = false;
  std::string note;
};

struct ConvexityReport {
  std::vector<KSample> samples;
  double k_inf = std::numeric_limits<double>::infinity();
  std::size_t witness = 0;
  double ricci_min = std::numeric_limits<double>::infinity();
  double ricci_max = -std::numeric_limits<double>::infinity();
  std::optional<double> requested_k;
  double tolerance = 0.02;
  bool pass = true;
  std::size_t skipped = 0;

  /// R(t, K) of a sample at level K.
  static double residual(const KSample& s, double k) { return s.chord_gap - k * s.lambda_green; }
};

namespace detail {
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// One localized geodesic: a bump mu_0 and its image under the theta-scaled
/// conformal Monge map, both on local grids.
struct GeodesicSample {
  double center = 0;
  double radius = 0;
  double speed = 0;
  double tilt = 0;
  QuotientMeasure mu0;
  QuotientMeasure mu1;
  double field_speed(double theta) const { return theta * speed; }
};

inline GeodesicSample make_geodesic_sample(const WarpedManifold& mf, const SamplerConfig& cfg,
                                           std::size_t index, double theta) {
  const double lo = cfg.region_lo.value_or(mf.support_lo());
  const double hi = cfg.region_hi.value_or(mf.support_hi());
  const double len = mf.length();
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeodesicSample g;
  for (int attempt = 0; attempt < 200; ++attempt) {
    g.radius = (0.5 + 0.5 * unit(rng)) * cfg.support_radius * len;
    g.radius = std::min(g.radius, 0.45 * (hi - lo));
    g.speed = (0.25 + 0.75 * unit(rng)) * cfg.max_separation * len;
    if (unit(rng) < 0.5) g.speed = -g.speed;
    g.tilt = unit(rng) - 0.5;
    g.center = lo + g.radius + unit(rng) * (hi - lo - 2 * g.radius);
    const double f0 = mf.f(g.center);
    auto disp = [&](double u) { return theta * g.speed * mf.f(u) / f0; };
    const double a = g.center - g.radius;
    const double b = g.center + g.radius;
    if (a + disp(a) >= lo && b + disp(b) <= hi && a + disp(a) < b + disp(b)) break;
    if (attempt == 199) throw ConfigError("sampler: could not place a localized geodesic in the region");
  }
  const double c = g.center, r = g.radius, tilt = g.tilt;
  const int power = cfg.bump_power;
  auto q0 = [&mf, c, r, tilt, power](double u) {
    const double x = (u - c) / r;
    return bump(x, power) * (1.0 + tilt * x) / quotient_volume_density(mf, u);
  };
  const auto grid0 = QuotientGrid::uniform(mf, c - r, c + r, cfg.n_u);
  std::vector<double> dens(grid0.size());
  for (std::size_t i = 0; i < grid0.size(); ++i) dens[i] = q0(grid0[i]);
  g.mu0 = make_quotient_measure(mf, grid0, dens, true);

  const double f0 = mf.f(c);
  const double v = theta * g.speed;
  auto field = [&mf, f0, v](double u) { return v * mf.f(u) / f0; };
  auto dfield = [&mf, f0, v](double u) { return v * mf.df(u) / f0; };
  const auto grid1 = QuotientGrid::uniform(mf, c - r + field(c - r), c + r + field(c + r), cfg.n_u);
  g.mu1 = pushforward_by_field(mf, g.mu0, field, dfield, grid1, q0);
  return g;
}

/// Estimates the best K with H locally K Lambda_N-displacement convex from
/// seeded localized geodesics, and compares with the horizontal Ricci oracle.
inline ConvexityReport estimate_k(const WarpedManifold& mf, const SamplerConfig& cfg,
                                  std::optional<double> requested_k = std::nullopt,
                                  double tolerance = 0.02, unsigned jobs = 1) {
  if (cfg.thetas.empty() || cfg.t_values.empty()) throw ConfigError("sampler: empty theta or t list");
  const std::size_t per_geo = cfg.thetas.size() * cfg.t_values.size();
  const std::size_t n_geo = cfg.count;
  std::vector<std::vector<KSample>> slots(n_geo);
  std::vector<std::array<double, 2>> ricci(n_geo, {std::numeric_limits<double>::infinity(),
                                                   -std::numeric_limits<double>::infinity()});
  const auto times = uniform_times(cfg.n_time);

  parallel_for(n_geo, jobs, [&](std::size_t gi) {
    auto& out = slots[gi];
    out.reserve(per_geo);
    for (std::size_t ti = 0; ti < cfg.thetas.size(); ++ti) {
      const double theta = cfg.thetas[ti];
      const GeodesicSample g = make_geodesic_sample(mf, cfg, gi, theta);
      for (const auto* mu : {&g.mu0, &g.mu1}) {
        for (std::size_t i = 0; i < mu->size(); ++i) {
          if (mu->density[i] > 0) {
            const double ric = horizontal_ricci(mf, mu->grid[i]);
            ricci[gi][0] = std::min(ricci[gi][0], ric);
            ricci[gi][1] = std::max(ricci[gi][1], ric);
          }
        }
      }
      std::vector<ResidualTerms> terms;
      std::string note;
      try {
        const MongeMap map = quantile_monge(g.mu0, g.mu1);
        if (!map.is_monotone()) throw CausticError("recovered map is not monotone");
        const auto path = displacement_interpolate(mf, g.mu0, map, times);
        terms = residual_terms(path, cfg.t_values);
      } catch (const CausticError& e) {
        note = e.what();
      }
      for (std::size_t k = 0; k < cfg.t_values.size(); ++k) {
        KSample s;
        s.geodesic = gi;
        s.id = gi * per_geo + ti * cfg.t_values.size() + k;
        s.theta = theta;
        s.t = cfg.t_values[k];
        s.center = g.center;
        s.radius = g.radius;
        s.speed = g.speed;
        if (terms.empty()) {
          s.skipped = true;
          s.note = note;
        } else {
          s.chord_gap = terms[k].chord_gap;
          s.lambda_green = terms[k].lambda_green;
          if (!(s.lambda_green >= cfg.min_lambda)) {
            s.skipped = true;
            s.note = "Lambda integral below guard";
          } else {
            s.k_est = s.chord_gap / s.lambda_green;
          }
        }
        out.push_back(std::move(s));
      }
    }
  });

  ConvexityReport rep;
  rep.requested_k = requested_k;
  rep.tolerance = tolerance;
  for (std::size_t gi = 0; gi < n_geo; ++gi) {
    rep.ricci_min = std::min(rep.ricci_min, ricci[gi][0]);
    rep.ricci_max = std::max(rep.ricci_max, ricci[gi][1]);
    for (auto& s : slots[gi]) rep.samples.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < rep.samples.size(); ++i) {
    const auto& s = rep.samples[i];
    if (s.skipped) {
      ++rep.skipped;
      continue;
    }
    if (s.k_est < rep.k_inf) {
      rep.k_inf = s.k_est;
      rep.witness = i;
    }
  }
  if (rep.skipped == rep.samples.size()) throw DegenerateMeasureError("estimate_k: every sample was skipped");
  rep.pass = !requested_k || rep.k_inf >= *requested_k - tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Second-order expansion in the scale theta of the potential.

struct TaylorConfig {
  std::vector<double> thetas{0.1, 0.05, 0.025};
  double t = 0.5;
  /// Speed |v_0| of the unscaled field at the base point.
  double speed = 1.0;
  /// Support radius = width_scale * theta when proportional, else width_scale.
  double width_scale = 1.0;
  bool proportional_width = true;
  std::size_t n_u = 1024;
  std::size_t n_time = 64;
  int bump_power = 4;
};

struct TaylorRow {
  double theta = 0;
  /// H(mu_t) - (1-t) H(mu_0) - t H(mu_1).
  double d = 0;
  /// -theta^2 Ric(v_0) int int rho_s^(1-1/N) G(s,t).
  double p = 0;
  /// Riccati defect along the base particle.
  double riccati = 0;
};

struct TaylorDiagnostics {
  double base = 0;
  double ricci = 0;
  std::vector<TaylorRow> rows;
  /// Fitted exponent of |D - P| in theta (absent when D - P vanishes).
  std::optional<double> remainder_exponent;
  /// Fitted exponent of |D| in theta.
  std::optional<double> d_exponent;
  /// D / P at the smallest theta (absent when P vanishes).
  std::optional<double> ratio_at_smallest;
};

inline TaylorDiagnostics taylor_check(const WarpedManifold& mf, double u0, double v0,
                                      const TaylorConfig& cfg) {
  if (cfg.thetas.size() < 2) throw ConfigError("taylor_check: need >= 2 theta values");
  for (std::size_t i = 1; i < cfg.thetas.size(); ++i) {
    if (!(cfg.thetas[i] < cfg.thetas[i - 1])) throw ConfigError("taylor_check: theta list must decrease");
  }
  for (double th : cfg.thetas) {
    if (!(th > 0)) throw ConfigError("taylor_check: theta values must be > 0");
  }
  TaylorDiagnostics diag;
  diag.base = u0;
  diag.ricci = horizontal_ricci(mf, u0);
  const auto times = uniform_times(cfg.n_time);
  const double tt[] = {cfg.t};

  for (double theta : cfg.thetas) {
    const double r = cfg.proportional_width ? cfg.width_scale * theta : cfg.width_scale;
    const auto grid = QuotientGrid::uniform(mf, u0 - r, u0 + r, cfg.n_u);
    std::vector<double> dens(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      dens[i] = bump((grid[i] - u0) / r, cfg.bump_power) / quotient_volume_density(mf, grid[i]);
    }
    const auto mu0 = make_quotient_measure(mf, grid, dens, true);
    const auto map = conformal_monge(mf, grid, u0, theta * v0);
    const auto path = displacement_interpolate(mf, mu0, map, times);
    const auto terms = residual_terms(path, tt).front();

    std::vector<double> mass_power(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) mass_power[k] = path_mass_power(path, k);

    TaylorRow row;
    row.theta = theta;
    row.d = -terms.chord_gap;
    row.p = -theta * theta * diag.ricci * v0 * v0 * green_integral(times, mass_power, cfg.t);

    const std::size_t mid = grid.size() / 2;
    std::vector<DeltaSample> deltas;
    for (double s : times) deltas.push_back({s, transport_jacobian(path, s, grid[mid], mf).delta});
    const double vmid = map.gradient[mid];
    row.riccati = riccati_defect(mf, grid[mid], vmid, deltas);
    diag.rows.push_back(row);
  }

  std::vector<double> th, rem, dd;
  bool rem_ok = true, d_ok = true;
  for (const auto& r : diag.rows) {
    th.push_back(r.theta);
    rem.push_back(std::abs(r.d - r.p));
    dd.push_back(std::abs(r.d));
    rem_ok = rem_ok && rem.back() > 0;
    d_ok = d_ok && dd.back() > 0;
  }
  if (rem_ok) diag.remainder_exponent = loglog_slope(th, rem);
  if (d_ok) diag.d_exponent = loglog_slope(th, dd);
  if (diag.rows.back().p != 0) diag.ratio_at_smallest = diag.rows.back().d / diag.rows.back().p;
  return diag;
}

}  // namespace orbitcurv
