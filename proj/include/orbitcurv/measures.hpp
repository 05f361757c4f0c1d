#pragma once

// Absolutely continuous measures on M = I x T^m and on the quotient I, and
// their disintegration along the torus orbits.
//
// Conventions:
//  * AbsContMeasure stores rho, the density with respect to vol of M, on a
//    tensor grid (quotient nodes) x (fiber nodes).
//  * QuotientMeasure stores q, the density with respect to pi_* vol (not du).
//    With this convention q(u) is also the M-density of the orbit-invariant
//    lift, and the gluing identity is a literal weighted sum.
//  * OrbitConditional stores the density with respect to vol_0, the fiber
//    volume normalized to unit mass; its mean over the fiber grid is 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "orbitcurv/errors.hpp"
#include "orbitcurv/geometry.hpp"
#include "orbitcurv/quadrature.hpp"

namespace orbitcurv {

/// Uniform grid on the torus T^m with n points per angle.
class FiberGrid {
 public:
  FiberGrid() = default;
  FiberGrid(int dim, std::size_t n_per_dim, double period)
      : dim_(dim), n_(n_per_dim), period_(period) {
    if (dim < 1 || n_per_dim < 1) throw ConfigError("fiber grid: dim and n must be >= 1");
    total_ = 1;
    for (int d = 0; d < dim; ++d) total_ *= n_per_dim;
  }
  static FiberGrid for_manifold(const WarpedManifold& mf, std::size_t n_per_dim) {
    return FiberGrid(mf.fiber_dim(), n_per_dim, mf.fiber_period());
  }

  int dim() const { return dim_; }
  std::size_t per_dim() const { return n_; }
  std::size_t size() const { return total_; }
  double period() const { return period_; }
  double step() const { return period_ / static_cast<double>(n_); }

  /// Angles of flat index j, first angle varying fastest.
  std::vector<double> angles(std::size_t j) const {
    std::vector<double> a(static_cast<std::size_t>(dim_));
    for (int d = 0; d < dim_; ++d) {
      a[static_cast<std::size_t>(d)] = step() * static_cast<double>(j % n_);
      j /= n_;
    }
    return a;
  }

  friend bool operator==(const FiberGrid& a, const FiberGrid& b) {
    return a.dim_ == b.dim_ && a.n_ == b.n_ && a.period_ == b.period_;
  }

 private:
  int dim_ = 1;
  std::size_t n_ = 1;
  std::size_t total_ = 1;
  double period_ = kTwoPi;
};

/// pi_* vol quadrature weights of a quotient grid: trapezoid * f^m * period^m.
inline std::vector<double> quotient_volume_weights(const WarpedManifold& mf,
                                                   const QuotientGrid& grid) {
  auto w = trapezoid_weights(grid.size(), grid.spacing());
  for (std::size_t i = 0; i < grid.size(); ++i) w[i] *= quotient_volume_density(mf, grid[i]);
  return w;
}

struct QuotientMeasure {
  QuotientGrid grid;
  /// pi_* vol mass carried by each node under the trapezoid rule.
  std::vector<double> volume_weight;
  /// Density with respect to pi_* vol.
  std::vector<double> density;

  std::size_t size() const { return density.size(); }
  double mass() const { return dot(volume_weight, density); }

  /// Density with respect to du, q * f^m * period^m.
  double density_du(std::size_t i) const {
    const double tw = (i == 0 || i + 1 == grid.size()) ? 0.5 * grid.spacing() : grid.spacing();
    return density[i] * volume_weight[i] / tw;
  }

  void normalize() {
    const double m = mass();
    if (!(m > 0) || !std::isfinite(m)) throw MassError("quotient measure has no mass");
    for (double& q : density) q /= m;
  }
};

/// Quotient measure from a density-vs-du callable; q = g / (f^m period^m).
inline QuotientMeasure make_quotient_measure_du(const WarpedManifold& mf, const QuotientGrid& grid,
                                                const std::function<double(double)>& density_du,
                                                bool normalize = true) {
  QuotientMeasure q{grid, quotient_volume_weights(mf, grid), std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double g = density_du(grid[i]);
    if (g < 0 || !std::isfinite(g)) throw DomainError("quotient density must be finite and >= 0");
    q.density[i] = g / quotient_volume_density(mf, grid[i]);
  }
  if (normalize) q.normalize();
  return q;
}

/// Quotient measure from a density with respect to pi_* vol.
inline QuotientMeasure make_quotient_measure(const WarpedManifold& mf, const QuotientGrid& grid,
                                             std::span<const double> density,
                                             bool normalize = true) {
  if (density.size() != grid.size()) throw ShapeError("quotient density/grid size mismatch");
  QuotientMeasure q{grid, quotient_volume_weights(mf, grid),
                    std::vector<double>(density.begin(), density.end())};
  for (double v : q.density) {
    if (v < 0 || !std::isfinite(v)) throw DomainError("quotient density must be finite and >= 0");
  }
  if (normalize) q.normalize();
  return q;
}

class AbsContMeasure {
 public:
  AbsContMeasure() = default;
  AbsContMeasure(const WarpedManifold& mf, QuotientGrid grid, FiberGrid fiber,
                 std::vector<double> rho)
      : grid_(std::move(grid)),
        fiber_(fiber),
        volume_weight_(quotient_volume_weights(mf, grid_)),
        rho_(std::move(rho)) {
    if (rho_.size() != grid_.size() * fiber_.size()) {
      throw ShapeError("density size must equal n_u * n_fiber");
    }
    for (double v : rho_) {
      if (v < 0 || !std::isfinite(v)) throw DomainError("density must be finite and >= 0");
    }
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      if (grid_[i] < mf.support_lo() - 1e-12 || grid_[i] > mf.support_hi() + 1e-12) {
        bool any = false;
        for (std::size_t j = 0; j < fiber_.size(); ++j) any = any || at(i, j) > 0;
        if (any) throw DomainError("measure charges the clamped neighbourhood of a singular orbit");
      }
    }
  }

  /// Samples rho(u, angles) on the tensor grid.
  static AbsContMeasure sample(const WarpedManifold& mf, const QuotientGrid& grid,
                               const FiberGrid& fiber,
                               const std::function<double(double, std::span<const double>)>& rho,
                               bool normalize = true) {
    std::vector<double> values(grid.size() * fiber.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      for (std::size_t j = 0; j < fiber.size(); ++j) {
        const auto a = fiber.angles(j);
        values[i * fiber.size() + j] = rho(grid[i], a);
      }
    }
    AbsContMeasure m(mf, grid, fiber, std::move(values));
    if (normalize) m.normalize();
    return m;
  }

  const QuotientGrid& grid() const { return grid_; }
  const FiberGrid& fiber() const { return fiber_; }
  const std::vector<double>& volume_weight() const { return volume_weight_; }
  std::span<const double> values() const { return rho_; }
  double at(std::size_t i, std::size_t j) const { return rho_[i * fiber_.size() + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(rho_).subspan(i * fiber_.size(), fiber_.size());
  }

  /// Fiber average of rho at node i, i.e. the integral against vol_0.
  double fiber_mean(std::size_t i) const {
    const auto r = row(i);
    return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(fiber_.size());
  }

  double mass() const {
    double m = 0;
    for (std::size_t i = 0; i < grid_.size(); ++i) m += volume_weight_[i] * fiber_mean(i);
    return m;
  }

  void normalize() {
    const double m = mass();
    if (!(m > 0) || !std::isfinite(m)) throw MassError("measure has no mass");
    for (double& v : rho_) v /= m;
  }

 private:
  QuotientGrid grid_;
  FiberGrid fiber_;
  std::vector<double> volume_weight_;
  std::vector<double> rho_;
};

struct OrbitConditional {
  double u = 0;
  /// Density with respect to vol_0 on the fiber grid; mean 1.
  std::vector<double> density;

  double mass() const {
    return std::accumulate(density.begin(), density.end(), 0.0) /
           static_cast<double>(density.size());
  }
};

struct Disintegration {
  QuotientMeasure marginal;
  FiberGrid fiber;
  std::vector<OrbitConditional> conditionals;
  /// Nodes strictly inside the support whose orbit carries no mass.
  std::vector<std::size_t> degenerate_orbits;
};

/// Projects mu to the quotient; the result is a density with respect to pi_* vol.
inline QuotientMeasure pushforward_quotient(const AbsContMeasure& mu) {
  QuotientMeasure q{mu.grid(), mu.volume_weight(), std::vector<double>(mu.grid().size())};
  for (std::size_t i = 0; i < q.size(); ++i) q.density[i] = mu.fiber_mean(i);
  q.normalize();
  return q;
}

namespace detail {
inline void require_normalized(double mass, const char* op) {
  if (std::abs(mass - 1.0) > 1e-9) {
    std::ostringstream os;
    os << op << ": measure must be normalized (mass = " << mass << ")";
    throw MassError(os.str());
  }
}
}  // namespace detail

/// Splits mu into its quotient marginal and one conditional per orbit.
inline Disintegration disintegrate(const AbsContMeasure& mu) {
  detail::require_normalized(mu.mass(), "disintegrate");
  const std::size_t n = mu.grid().size();
  const std::size_t nf = mu.fiber().size();
  Disintegration d;
  d.fiber = mu.fiber();
  d.marginal = QuotientMeasure{mu.grid(), mu.volume_weight(), std::vector<double>(n)};
  d.conditionals.resize(n);

  std::size_t first = n, last = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mu.fiber_mean(i) > 0) {
      first = std::min(first, i);
      last = i;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = mu.fiber_mean(i);
    OrbitConditional& c = d.conditionals[i];
    c.u = mu.grid()[i];
    c.density.resize(nf);
    d.marginal.density[i] = mean;
    if (mean > 0) {
      const auto r = mu.row(i);
      for (std::size_t j = 0; j < nf; ++j) c.density[j] = r[j] / mean;
    } else {
      std::fill(c.density.begin(), c.density.end(), 1.0);
      if (first < n && i > first && i < last) d.degenerate_orbits.push_back(i);
    }
  }
  return d;
}

/// Rebuilds mu from a disintegration: rho(u_i, .) = q(u_i) * rho_{u_i}(.).
inline AbsContMeasure glue(const Disintegration& d, const WarpedManifold& mf) {
  const std::size_t n = d.marginal.grid.size();
  if (d.conditionals.size() != n || d.marginal.density.size() != n) {
    throw ShapeError("glue: marginal and conditional grids differ");
  }
  const std::size_t nf = d.fiber.size();
  std::vector<double> rho(n * nf);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = d.conditionals[i];
    if (c.density.size() != nf) throw ShapeError("glue: conditional fiber size mismatch");
    if (std::abs(c.u - d.marginal.grid[i]) > 1e-12 * std::max(1.0, std::abs(c.u))) {
      throw ShapeError("glue: conditional orbit label does not match marginal node");
    }
    for (std::size_t j = 0; j < nf; ++j) rho[i * nf + j] = d.marginal.density[i] * c.density[j];
  }
  return AbsContMeasure(mf, d.marginal.grid, d.fiber, std::move(rho));
}

/// Uniform fiber measure vol_0 as an OrbitConditional.
inline OrbitConditional uniform_conditional(const FiberGrid& fiber, double u = 0) {
  return OrbitConditional{u, std::vector<double>(fiber.size(), 1.0)};
}

/// Common conditional nu_0 of nu = exp(-V) vol. V must not depend on the
/// quotient coordinate; this is checked on every node of `grid`.
inline OrbitConditional reference_conditional(
    const std::function<double(double, std::span<const double>)>& potential,
    const WarpedManifold& mf, const QuotientGrid& grid, const FiberGrid& fiber,
    double tolerance = 1e-12) {
  (void)mf;
  const std::size_t nf = fiber.size();
  std::vector<double> v0(nf);
  for (std::size_t j = 0; j < nf; ++j) v0[j] = potential(grid[0], fiber.angles(j));
  for (std::size_t i = 1; i < grid.size(); ++i) {
    for (std::size_t j = 0; j < nf; ++j) {
      const double v = potential(grid[i], fiber.angles(j));
      if (std::abs(v - v0[j]) > tolerance * std::max(1.0, std::abs(v0[j]))) {
        std::ostringstream os;
        os << "reference potential varies along the horizontal direction (u = " << grid[i] << ")";
        throw ConfigError(os.str());
      }
    }
  }
  // Shift by the minimum so constants cancel exactly.
  const double vmin = *std::min_element(v0.begin(), v0.end());
  OrbitConditional c{grid[0], std::vector<double>(nf)};
  double z = 0;
  for (std::size_t j = 0; j < nf; ++j) {
    c.density[j] = std::exp(-(v0[j] - vmin));
    z += c.density[j];
  }
  z /= static_cast<double>(nf);
  if (!(z > 0) || !std::isfinite(z) || !std::isfinite(vmin)) {
    throw MassError("exp(-V) is not integrable on the fiber");
  }
  for (double& x : c.density) x /= z;
  return c;
}

// ---------------------------------------------------------------------------
// Density presets.

/// Compactly supported smooth bump (1 - x^2)^k on |x| < 1.
inline double bump(double x, int power = 4) {
  if (std::abs(x) >= 1.0) return 0.0;
  return std::pow(1.0 - x * x, power);
}

/// Fiber-uniform density proportional to vol on the band [lo, hi].
inline AbsContMeasure uniform_band(const WarpedManifold& mf, const QuotientGrid& grid,
                                   const FiberGrid& fiber, double lo, double hi) {
  const double tol = 1e-12 * std::max(1.0, std::abs(hi));
  return AbsContMeasure::sample(mf, grid, fiber, [lo, hi, tol](double u, std::span<const double>) {
    return (u >= lo - tol && u <= hi + tol) ? 1.0 : 0.0;
  });
}

/// Fiber-uniform Gaussian in u, density with respect to du.
inline AbsContMeasure gaussian_on_quotient(const WarpedManifold& mf, const QuotientGrid& grid,
                                           const FiberGrid& fiber, double center, double sigma) {
  return AbsContMeasure::sample(mf, grid, fiber, [&](double u, std::span<const double>) {
    const double z = (u - center) / sigma;
    return std::exp(-0.5 * z * z) / quotient_volume_density(mf, u);
  });
}

/// Two Gaussian bumps, the second modulated along the first fiber angle.
inline AbsContMeasure two_bump(const WarpedManifold& mf, const QuotientGrid& grid,
                               const FiberGrid& fiber, double c0, double c1, double sigma) {
  return AbsContMeasure::sample(mf, grid, fiber, [&](double u, std::span<const double> a) {
    const double z0 = (u - c0) / sigma;
    const double z1 = (u - c1) / sigma;
    return std::exp(-0.5 * z0 * z0) + std::exp(-0.5 * z1 * z1) * (1.0 + 0.5 * std::cos(a[0]));
  });
}

/// Smooth strictly positive random density: exp of a random trigonometric
/// polynomial in (u, angles), reproducible from the seed.
inline AbsContMeasure random_density(const WarpedManifold& mf, const QuotientGrid& grid,
                                     const FiberGrid& fiber, std::uint64_t seed, int modes = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coef(-0.6, 0.6);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  struct Mode {
    int ku;
    int kt;
    double a;
    double phi;
  };
  std::vector<Mode> ms;
  for (int ku = 0; ku <= modes; ++ku) {
    for (int kt = 0; kt <= modes; ++kt) ms.push_back({ku, kt, coef(rng), phase(rng)});
  }
  const double lo = grid.front();
  const double len = grid.back() - grid.front();
  return AbsContMeasure::sample(mf, grid, fiber, [&](double u, std::span<const double> a) {
    const double x = (u - lo) / len;
    double s = 0;
    for (const auto& m : ms) {
      double ang = 0;
      for (double ai : a) ang += ai;
      s += m.a * std::cos(kTwoPi * 0.5 * m.ku * x + m.kt * ang + m.phi) / (1.0 + m.ku + m.kt);
    }
    return std::exp(s);
  });
}

}  // namespace orbitcurv
