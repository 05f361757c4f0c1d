#pragma once

// Optimal transport on the one-dimensional quotient.
//
// Every quotient measure is handled through its piecewise-linear CDF: node
// values come from the trapezoid rule and the CDF is linear between nodes.
// Quantiles invert that CDF exactly, the Monge map is T = Q_1 o F_0, and
// W_2 is the L^2 distance of quantile functions integrated exactly over the
// merged breakpoints. Displacement interpolation moves the quotient nodes as
// particles along meridians and reconstructs densities by change of variables.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "orbitcurv/errors.hpp"
#include "orbitcurv/geometry.hpp"
#include "orbitcurv/measures.hpp"
#include "orbitcurv/quadrature.hpp"

namespace orbitcurv {

/// Monotone piecewise-linear CDF through (x_i, F_i), F_0 = 0, F_last = 1.
struct Cdf1D {
  std::vector<double> x;
  std::vector<double> F;

  /// Index k >= 1 of the cell [k-1, k] carrying level s in (F[k-1], F[k]].
  std::size_t cell_of(double s) const {
    auto it = std::lower_bound(F.begin() + 1, F.end(), s);
    if (it == F.end()) --it;
    return static_cast<std::size_t>(it - F.begin());
  }

  double quantile_in_cell(std::size_t k, double s) const {
    const double dF = F[k] - F[k - 1];
    if (!(dF > 0)) return x[k];
    return x[k - 1] + (s - F[k - 1]) / dF * (x[k] - x[k - 1]);
  }

  /// Generalized inverse inf{x : F(x) >= s}; s = 0 gives the left support edge.
  double quantile(double s) const {
    if (s <= 0) {
      std::size_t k = 0;
      while (k + 1 < F.size() && F[k + 1] <= 0) ++k;
      return x[k];
    }
    return quantile_in_cell(cell_of(s), std::min(s, 1.0));
  }

  double operator()(double y) const {
    if (y <= x.front()) return 0.0;
    if (y >= x.back()) return 1.0;
    auto it = std::upper_bound(x.begin(), x.end(), y);
    const std::size_t k = static_cast<std::size_t>(it - x.begin());
    const double dx = x[k] - x[k - 1];
    if (!(dx > 0)) return F[k];
    return F[k - 1] + (y - x[k - 1]) / dx * (F[k] - F[k - 1]);
  }
};

/// Trapezoid CDF of a quotient measure in the u coordinate.
inline Cdf1D cdf_of(const QuotientMeasure& mu) {
  const std::size_t n = mu.size();
  Cdf1D c{std::vector<double>(mu.grid.nodes().begin(), mu.grid.nodes().end()),
          std::vector<double>(n, 0.0)};
  const double h = mu.grid.spacing();
  for (std::size_t i = 1; i < n; ++i) {
    c.F[i] = c.F[i - 1] + 0.5 * h * (mu.density_du(i - 1) + mu.density_du(i));
  }
  const double total = c.F.back();
  if (!(total > 0)) throw DegenerateMeasureError("measure has empty support");
  for (double& v : c.F) v /= total;
  c.F.back() = 1.0;
  return c;
}

/// Squared W_2 between two piecewise-linear-CDF measures on the line.
inline double w2_squared(const Cdf1D& a, const Cdf1D& b) {
  std::vector<double> levels;
  levels.reserve(a.F.size() + b.F.size());
  levels.insert(levels.end(), a.F.begin(), a.F.end());
  levels.insert(levels.end(), b.F.begin(), b.F.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double acc = 0;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const double s0 = std::max(levels[i], 0.0);
    const double s1 = std::min(levels[i + 1], 1.0);
    if (!(s1 > s0)) continue;
    const double mid = 0.5 * (s0 + s1);
    const std::size_t ka = a.cell_of(mid);
    const std::size_t kb = b.cell_of(mid);
    const double d0 = b.quantile_in_cell(kb, s0) - a.quantile_in_cell(ka, s0);
    const double d1 = b.quantile_in_cell(kb, s1) - a.quantile_in_cell(ka, s1);
    acc += (s1 - s0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
  }
  return acc;
}

/// W_2 between quotient measures by quantile quadrature.
inline double w2_distance(const QuotientMeasure& mu0, const QuotientMeasure& mu1) {
  return std::sqrt(std::max(0.0, w2_squared(cdf_of(mu0), cdf_of(mu1))));
}

/// Point mass configuration on the line.
struct Atoms {
  std::vector<double> position;
  std::vector<double> weight;
};

/// Exact squared W_2 between discrete measures on the line (step quantiles).
inline double w2_squared_atoms(const Atoms& a, const Atoms& b) {
  auto order = [](const Atoms& m) {
    std::vector<std::size_t> idx(m.position.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t i, std::size_t j) { return m.position[i] < m.position[j]; });
    return idx;
  };
  const auto ia = order(a);
  const auto ib = order(b);
  std::size_t i = 0, j = 0;
  double ra = ia.empty() ? 0 : a.weight[ia[0]];
  double rb = ib.empty() ? 0 : b.weight[ib[0]];
  double acc = 0;
  while (i < ia.size() && j < ib.size()) {
    const double m = std::min(ra, rb);
    const double d = a.position[ia[i]] - b.position[ib[j]];
    acc += m * d * d;
    ra -= m;
    rb -= m;
    if (ra <= 0 && i + 1 < ia.size()) {
      ++i;
      ra += a.weight[ia[i]];
    } else if (ra <= 0) {
      ++i;
    }
    if (rb <= 0 && j + 1 < ib.size()) {
      ++j;
      rb += b.weight[ib[j]];
    } else if (rb <= 0) {
      ++j;
    }
    if (i >= ia.size() || j >= ib.size()) break;
  }
  return acc;
}

/// Node masses of a quotient measure as atoms at the nodes.
inline Atoms atoms_of(const QuotientMeasure& mu) {
  Atoms a{std::vector<double>(mu.grid.nodes().begin(), mu.grid.nodes().end()),
          std::vector<double>(mu.size())};
  double total = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    a.weight[i] = mu.volume_weight[i] * mu.density[i];
    total += a.weight[i];
  }
  for (double& w : a.weight) w /= total;
  return a;
}

// ---------------------------------------------------------------------------

/// Horizontal Monge map sampled on the source grid:
/// T(u_i) = exp_horizontal(u_i, grad psi(u_i), 1) = u_i + grad psi(u_i).
struct MongeMap {
  QuotientGrid grid;
  std::vector<double> image;
  std::vector<double> gradient;
  std::vector<double> potential;
  /// dT/du at the nodes.
  std::vector<double> slope;

  std::size_t size() const { return image.size(); }

  bool is_monotone() const {
    for (std::size_t i = 0; i + 1 < image.size(); ++i) {
      if (image[i + 1] < image[i]) return false;
    }
    return true;
  }

  /// The map of the potential theta * psi.
  MongeMap scaled(double theta) const {
    MongeMap m = *this;
    for (std::size_t i = 0; i < size(); ++i) {
      m.gradient[i] = theta * gradient[i];
      m.image[i] = grid[i] + m.gradient[i];
      m.potential[i] = theta * potential[i];
      m.slope[i] = 1.0 + theta * (slope[i] - 1.0);
    }
    return m;
  }

  /// Linear interpolation of the gradient; constant outside the grid.
  double gradient_at(double u) const {
    if (u <= grid.front()) return gradient.front();
    if (u >= grid.back()) return gradient.back();
    const double x = (u - grid.front()) / grid.spacing();
    const std::size_t k = std::min(static_cast<std::size_t>(x), grid.size() - 2);
    const double w = x - static_cast<double>(k);
    return (1 - w) * gradient[k] + w * gradient[k + 1];
  }
};

namespace detail {
/// Finite-difference derivative on a uniform grid: central differences inside,
/// one-sided differences at the ends. With this choice h * d[i] equals the
/// trapezoid half-width of node i after the map, so moved-node quadrature and
/// Jacobian-weighted base quadrature agree node by node.
inline std::vector<double> derivative(std::span<const double> y, double h) {
  const std::size_t n = y.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (y[i + 1] - y[i - 1]) / (2 * h);
  d[0] = (y[1] - y[0]) / h;
  d[n - 1] = (y[n - 1] - y[n - 2]) / h;
  return d;
}

/// psi(u_0) = 0, psi' = gradient, trapezoid rule.
inline std::vector<double> integrate_gradient(std::span<const double> g, double h) {
  std::vector<double> psi(g.size(), 0.0);
  for (std::size_t i = 1; i < g.size(); ++i) psi[i] = psi[i - 1] + 0.5 * h * (g[i - 1] + g[i]);
  return psi;
}
}  // namespace detail

/// Monotone rearrangement T = Q_1 o F_0 between quotient measures.
inline MongeMap quantile_monge(const QuotientMeasure& mu0, const QuotientMeasure& mu1) {
  const Cdf1D f0 = cdf_of(mu0);
  const Cdf1D f1 = cdf_of(mu1);
  MongeMap m;
  m.grid = mu0.grid;
  const std::size_t n = mu0.size();
  m.image.resize(n);
  m.gradient.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.image[i] = f1.quantile(f0.F[i]);
    m.gradient[i] = m.image[i] - mu0.grid[i];
  }
  m.slope = detail::derivative(m.image, mu0.grid.spacing());
  m.potential = detail::integrate_gradient(m.gradient, mu0.grid.spacing());
  return m;
}

/// Map of a prescribed horizontal field: T(u) = u + field(u), slope from the
/// field derivative.
inline MongeMap monge_from_field(const QuotientGrid& grid, const std::function<double(double)>& field,
                                 const std::function<double(double)>& field_derivative) {
  MongeMap m;
  m.grid = grid;
  const std::size_t n = grid.size();
  m.image.resize(n);
  m.gradient.resize(n);
  m.slope.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.gradient[i] = field(grid[i]);
    m.image[i] = grid[i] + m.gradient[i];
    m.slope[i] = 1.0 + field_derivative(grid[i]);
  }
  m.potential = detail::integrate_gradient(m.gradient, grid.spacing());
  return m;
}

/// Conformal horizontal map u -> u + speed f(u)/f(u0).
inline MongeMap conformal_monge(const WarpedManifold& mf, const QuotientGrid& grid, double u0,
                                double speed) {
  const double f0 = mf.f(u0);
  return monge_from_field(
      grid, [&](double u) { return speed * mf.f(u) / f0; },
      [&](double u) { return speed * mf.df(u) / f0; });
}

/// Push-forward of mu0 by a monotone map, resampled on `target`:
/// q1(y) = q0(x) / J(x) with y = T(x), J = T'(x) (f(T x)/f(x))^m.
inline QuotientMeasure pushforward_by_field(const WarpedManifold& mf, const QuotientMeasure& mu0,
                                            const std::function<double(double)>& field,
                                            const std::function<double(double)>& field_derivative,
                                            const QuotientGrid& target,
                                            const std::function<double(double)>& q0_exact) {
  std::vector<double> q1(target.size(), 0.0);
  const double lo = mu0.grid.front();
  const double hi = mu0.grid.back();
  const double tlo = lo + field(lo);
  const double thi = hi + field(hi);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double y = target[i];
    if (y < tlo || y > thi) continue;
    double a = lo, b = hi;
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(b)); ++it) {
      const double c = 0.5 * (a + b);
      (c + field(c) < y ? a : b) = c;
    }
    double x = 0.5 * (a + b);
    // Newton polish.
    for (int it = 0; it < 3; ++it) {
      const double g = x + field(x) - y;
      x -= g / (1.0 + field_derivative(x));
    }
    const double jac =
        (1.0 + field_derivative(x)) * std::pow(mf.f(x + field(x)) / mf.f(x), mf.fiber_dim());
    q1[i] = q0_exact(x) / jac;
  }
  return make_quotient_measure(mf, target, q1, true);
}

// ---------------------------------------------------------------------------

/// The measure mu_t = (T_t)_* mu_0 carried by the moved quotient nodes.
struct PathMeasure {
  double t = 0;
  std::vector<double> position;
  /// CDF at the moved nodes; identical to the CDF of mu_0 at the base nodes.
  std::vector<double> cdf;
  /// Density with respect to pi_* vol at the moved nodes: rho_0 / J.
  std::vector<double> density;
  /// Trapezoid on the moved nodes times f(y)^m period^m.
  std::vector<double> volume_weight;
  std::vector<double> jacobian;

  Cdf1D as_cdf() const { return Cdf1D{position, cdf}; }
  /// Exact mass of the particle measure.
  double mass() const { return cdf.back() - cdf.front(); }
  /// Mass of the reconstructed density under the moved-node quadrature.
  double quadrature_mass() const { return dot(volume_weight, density); }
};

struct DisplacementPath {
  std::vector<double> times;
  QuotientMeasure base;
  MongeMap map;
  std::vector<PathMeasure> steps;
  int dim = 2;

  std::size_t time_index(double t) const {
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (std::abs(times[k] - t) <= 1e-12) return k;
    }
    std::ostringstream os;
    os << "time " << t << " is not on the path grid";
    throw DomainError(os.str());
  }
  const PathMeasure& at(double t) const { return steps[time_index(t)]; }
  /// Particle speed |grad psi_s(T_s x)| = |grad psi(x)|.
  double speed(std::size_t i) const { return std::abs(map.gradient[i]); }
};

/// Uniform time grid with n_intervals + 1 nodes on [0, 1].
inline std::vector<double> uniform_times(std::size_t n_intervals) {
  std::vector<double> t(n_intervals + 1);
  for (std::size_t k = 0; k <= n_intervals; ++k) {
    t[k] = static_cast<double>(k) / static_cast<double>(n_intervals);
  }
  return t;
}

/// mu_t = (exp(t grad psi))_* mu_0 on every time of `times`.
inline DisplacementPath displacement_interpolate(const WarpedManifold& mf, const QuotientMeasure& mu0,
                                                 const MongeMap& map, std::span<const double> times) {
  if (!(map.grid == mu0.grid)) throw ShapeError("displacement_interpolate: map/measure grid mismatch");
  if (times.empty() || times.front() != 0.0 || times.back() != 1.0) {
    throw DomainError("displacement_interpolate: time grid must cover [0, 1]");
  }
  const std::size_t n = mu0.size();
  const int m = mf.fiber_dim();
  const Cdf1D f0 = cdf_of(mu0);

  DisplacementPath path;
  path.times.assign(times.begin(), times.end());
  path.base = mu0;
  path.map = map;
  path.dim = mf.dim();
  path.steps.reserve(times.size());

  for (double t : times) {
    PathMeasure pm;
    pm.t = t;
    pm.position.resize(n);
    pm.density.assign(n, 0.0);
    pm.jacobian.assign(n, 1.0);
    pm.cdf = f0.F;
    for (std::size_t i = 0; i < n; ++i) {
      double y;
      try {
        y = exp_horizontal(mf, mu0.grid[i], map.gradient[i], t);
      } catch (const GeodesicEscapeError& e) {
        std::ostringstream os;
        os << "particle " << i << " (u = " << mu0.grid[i] << ") escapes at t = " << t << ": "
           << e.what();
        throw GeodesicEscapeError(os.str(), e.exit_time());
      }
      if (!mf.inside(y)) {
        std::ostringstream os;
        os << "particle " << i << " (u = " << mu0.grid[i] << ") reaches a singular orbit at t = "
           << t;
        throw GeodesicEscapeError(os.str(), t);
      }
      pm.position[i] = y;
    }
    std::vector<double> w = trapezoid_weights(pm.position);
    pm.volume_weight.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      pm.volume_weight[i] = w[i] * quotient_volume_density(mf, pm.position[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mu0.density[i] > 0)) continue;
      const double stretch = 1.0 + t * (map.slope[i] - 1.0);
      const double fiber = std::pow(mf.f(pm.position[i]) / mf.f(mu0.grid[i]), m);
      const double jac = stretch * fiber;
      if (!(std::abs(stretch) >= 1e-12) || !(jac > 1e-12)) {
        std::ostringstream os;
        os << "caustic: particle " << i << " (u = " << mu0.grid[i] << ") has Jacobian " << jac
           << " at t = " << t;
        throw CausticError(os.str());
      }
      pm.jacobian[i] = jac;
      pm.density[i] = mu0.density[i] / jac;
    }
    path.steps.push_back(std::move(pm));
  }
  return path;
}

/// Largest mismatch between the cell masses of the path endpoint and those
/// of mu1 over the same intervals.
inline double endpoint_mass_defect(const PathMeasure& end, const QuotientMeasure& mu1) {
  const Cdf1D f1 = cdf_of(mu1);
  double worst = 0;
  for (std::size_t i = 0; i + 1 < end.position.size(); ++i) {
    const double path_mass = end.cdf[i + 1] - end.cdf[i];
    const double target = f1(end.position[i + 1]) - f1(end.position[i]);
    worst = std::max(worst, std::abs(path_mass - target));
  }
  return worst;
}

/// Resamples a path measure onto a uniform grid (density by linear interpolation).
inline QuotientMeasure resample(const WarpedManifold& mf, const PathMeasure& pm,
                                const QuotientGrid& grid) {
  std::vector<double> q(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double y = grid[i];
    auto it = std::upper_bound(pm.position.begin(), pm.position.end(), y);
    if (it == pm.position.begin() || it == pm.position.end()) continue;
    const std::size_t k = static_cast<std::size_t>(it - pm.position.begin());
    const double dx = pm.position[k] - pm.position[k - 1];
    const double w = dx > 0 ? (y - pm.position[k - 1]) / dx : 0.0;
    q[i] = (1 - w) * pm.density[k - 1] + w * pm.density[k];
  }
  return make_quotient_measure(mf, grid, q, true);
}

struct JacobianSample {
  double jacobian;
  /// jacobian^(1/N).
  double delta;
};

/// Full Jacobian on M of the horizontal flow at a particle start node:
/// |dT_t/du| (f(T_t u)/f(u))^m, and delta = J^(1/N).
inline JacobianSample transport_jacobian(const DisplacementPath& path, double t, double u,
                                         const WarpedManifold& mf) {
  const std::size_t k = path.time_index(t);
  const auto& grid = path.map.grid;
  const double x = (u - grid.front()) / grid.spacing();
  const auto i = static_cast<std::size_t>(std::llround(x));
  if (i >= grid.size() || std::abs(grid[i] - u) > 1e-9 * std::max(1.0, std::abs(u))) {
    throw DomainError("transport_jacobian: u is not a particle start node");
  }
  const double stretch = 1.0 + t * (path.map.slope[i] - 1.0);
  if (!(std::abs(stretch) >= 1e-12)) throw CausticError("transport_jacobian: collapsed spacing");
  const double y = path.steps[k].position[i];
  const double jac = std::abs(stretch) * std::pow(mf.f(y) / mf.f(u), mf.fiber_dim());
  return {jac, std::pow(jac, 1.0 / mf.dim())};
}

/// Max |W2(mu_s, mu_t) - |t - s| W2(mu_0, mu_1)| over all pairs of path times.
inline double geodesic_defect(const DisplacementPath& path) {
  std::vector<Cdf1D> cdfs;
  for (const auto& s : path.steps) cdfs.push_back(s.as_cdf());
  const double total = std::sqrt(w2_squared(cdfs.front(), cdfs.back()));
  double worst = 0;
  for (std::size_t a = 0; a < cdfs.size(); ++a) {
    for (std::size_t b = a + 1; b < cdfs.size(); ++b) {
      const double w = std::sqrt(std::max(0.0, w2_squared(cdfs[a], cdfs[b])));
      const double expect = std::abs(path.times[b] - path.times[a]) * total;
      worst = std::max(worst, std::abs(w - expect));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------

/// Viscosity solution of d_t psi + |grad psi|^2 / 2 = 0 by the Hopf-Lax
/// formula psi_t(u) = min_y psi_0(y) + |u - y|^2 / (2t) over the grid nodes.
inline std::vector<double> hopf_lax_potential(std::span<const double> nodes,
                                              std::span<const double> psi0, double t) {
  if (nodes.size() != psi0.size()) throw ShapeError("hopf_lax_potential: size mismatch");
  if (t < 0) throw DomainError("hopf_lax_potential: t must be >= 0");
  std::vector<double> out(psi0.begin(), psi0.end());
  if (t == 0) return out;
  const double inv = 1.0 / (2.0 * t);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const double d = nodes[i] - nodes[j];
      best = std::min(best, psi0[j] + d * d * inv);
    }
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Gradient of a potential on M in coordinates (u, angles): the horizontal
/// component and the angular coordinate components (already divided by f^2).
using LiftedField = std::function<void(double u, std::span<const double> angles, double& du,
                                       std::span<double> dangles)>;

/// Lift of a quotient Monge map: independent of the angles.
inline LiftedField lift(const MongeMap& map) {
  return [map](double u, std::span<const double>, double& du, std::span<double> da) {
    du = map.gradient_at(u);
    std::fill(da.begin(), da.end(), 0.0);
  };
}

struct OrbitTransportReport {
  /// max |T(g x) - g T(x)| over sampled points and rotations.
  double commutator_defect = 0;
  /// max |rho_pushed - 1| of the uniform conditional pushed through the fiber part.
  double conditional_defect = 0;
  std::size_t rotations = 0;
};

namespace detail {
inline double wrap_angle(double a, double period) {
  double r = std::fmod(a, period);
  if (r < 0) r += period;
  return r;
}
inline double angle_distance(double a, double b, double period) {
  const double d = wrap_angle(a - b, period);
  return std::min(d, period - d);
}
inline double determinant(std::vector<double> a, std::size_t n) {
  double det = 1;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r * n + c]) > std::abs(a[p * n + c])) p = r;
    }
    if (a[p * n + c] == 0) return 0;
    if (p != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[p * n + k], a[c * n + k]);
      det = -det;
    }
    det *= a[c * n + c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return det;
}
}  // namespace detail

/// Checks T(g x) = g T(x) for the first-order lift T(u, a) = (u + du, a + da)
/// of `field`, over the nodes of `orbits` x `fiber` and `rotations`, and that
/// the uniform conditional at u is carried to the uniform conditional.
inline OrbitTransportReport orbit_transport_check(const WarpedManifold& mf, const LiftedField& field,
                                                  const QuotientGrid& orbits, const FiberGrid& fiber,
                                                  std::span<const std::vector<double>> rotations) {
  const int m = mf.fiber_dim();
  const double period = mf.fiber_period();
  const auto md = static_cast<std::size_t>(m);
  OrbitTransportReport rep;
  rep.rotations = rotations.size();
  std::vector<double> da(md), dg(md), ga(md);
  auto apply = [&](double u, std::span<const double> a, double& u_out, std::vector<double>& a_out) {
    double du = 0;
    field(u, a, du, da);
    u_out = u + du;
    a_out.resize(md);
    for (std::size_t d = 0; d < md; ++d) a_out[d] = a[d] + da[d];
  };
  std::vector<double> a_img, ga_img;
  for (std::size_t i = 0; i < orbits.size(); ++i) {
    const double u = orbits[i];
    for (std::size_t j = 0; j < fiber.size(); ++j) {
      const auto a = fiber.angles(j);
      double u_img = 0;
      apply(u, a, u_img, a_img);
      for (const auto& g : rotations) {
        if (g.size() != md) throw ShapeError("rotation dimension differs from fiber dimension");
        for (std::size_t d = 0; d < md; ++d) ga[d] = a[d] + g[d];
        double u_gimg = 0;
        apply(u, ga, u_gimg, ga_img);
        double defect = std::abs(u_gimg - u_img);
        for (std::size_t d = 0; d < md; ++d) {
          const double ang = detail::angle_distance(ga_img[d], a_img[d] + g[d], period);
          defect = std::max(defect, mf.f(u_img) * ang);
        }
        rep.commutator_defect = std::max(rep.commutator_defect, defect);
      }
      // Fiber Jacobian of a -> a + da(u, a) by central differences.
      const double eps = 1e-5;
      std::vector<double> jac(md * md, 0.0);
      for (std::size_t c = 0; c < md; ++c) {
        std::vector<double> ap(a), am(a);
        ap[c] += eps;
        am[c] -= eps;
        double up = 0, um = 0;
        std::vector<double> ip, im;
        apply(u, ap, up, ip);
        apply(u, am, um, im);
        for (std::size_t r = 0; r < md; ++r) jac[r * md + c] = (ip[r] - im[r]) / (2 * eps);
      }
      const double det = std::abs(detail::determinant(jac, md));
      const double pushed = det > 0 ? 1.0 / det : std::numeric_limits<double>::infinity();
      rep.conditional_defect = std::max(rep.conditional_defect, std::abs(pushed - 1.0));
    }
  }
  return rep;
}

/// Deterministic set of `count` rotations of T^m (golden-ratio sequence).
inline std::vector<std::vector<double>> sample_rotations(int fiber_dim, std::size_t count,
                                                         double period) {
  std::vector<std::vector<double>> g(count, std::vector<double>(static_cast<std::size_t>(fiber_dim)));
  const double phi = 0.6180339887498949;
  for (std::size_t k = 0; k < count; ++k) {
    for (int d = 0; d < fiber_dim; ++d) {
      const double x = std::fmod((static_cast<double>(k) + 1.0) * phi * (d + 1) + 0.1 * d, 1.0);
      g[k][static_cast<std::size_t>(d)] = x * period;
    }
  }
  return g;
}

}  // namespace orbitcurv
