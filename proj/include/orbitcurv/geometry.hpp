#pragma once

// Cohomogeneity-one warped products M = I x T^m with metric
//   g = du^2 + f(u)^2 (dtheta_1^2 + ... + dtheta_m^2).
// The torus T^m acts by translating the angles; its orbits are the fibers
// {u} x T^m and the quotient M/T^m is the interval I, parametrized by arc
// length u. Meridians (theta fixed) are unit-speed geodesics orthogonal to
// every orbit, so horizontal geodesics are affine in u.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "orbitcurv/errors.hpp"
#include "orbitcurv/profile.hpp"

namespace orbitcurv {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

class WarpedManifold {
 public:
  WarpedManifold(double u_min, double u_max, Profile profile, int fiber_dim = 1,
                 double fiber_period = kTwoPi, double clamp_fraction = 1e-3)
      : u_min_(u_min),
        u_max_(u_max),
        profile_(std::move(profile)),
        fiber_dim_(fiber_dim),
        fiber_period_(fiber_period),
        clamp_fraction_(clamp_fraction) {
    if (!(u_max > u_min)) throw ConfigError("manifold: u_max must exceed u_min");
    if (fiber_dim < 1) throw ConfigError("manifold: fiber_dim must be >= 1");
    if (!(fiber_period > 0)) throw ConfigError("manifold: fiber_period must be > 0");
    if (!(clamp_fraction >= 0 && clamp_fraction < 0.5)) {
      throw ConfigError("manifold: clamp fraction must lie in [0, 0.5)");
    }
    // Profile positivity on the open interval, sampled.
    constexpr int kProbe = 257;
    for (int i = 1; i < kProbe - 1; ++i) {
      const double u = u_min + (u_max - u_min) * i / (kProbe - 1);
      if (!(profile_.value(u) > 0)) {
        std::ostringstream os;
        os << "manifold: profile must be positive inside (u_min, u_max); f(" << u
           << ") = " << profile_.value(u);
        throw ConfigError(os.str());
      }
    }
  }

  double u_min() const { return u_min_; }
  double u_max() const { return u_max_; }
  double length() const { return u_max_ - u_min_; }
  const Profile& profile() const { return profile_; }
  int fiber_dim() const { return fiber_dim_; }
  /// Total dimension N = m + 1.
  int dim() const { return fiber_dim_ + 1; }
  double fiber_period() const { return fiber_period_; }
  /// Volume of the flat reference torus, period^m.
  double fiber_volume() const { return std::pow(fiber_period_, fiber_dim_); }

  /// Supports are clamped to [u_min + eps, u_max - eps] so that no mass
  /// reaches an endpoint orbit, where f may vanish.
  double clamp_epsilon() const { return clamp_fraction_ * length(); }
  double support_lo() const { return u_min_ + clamp_epsilon(); }
  double support_hi() const { return u_max_ - clamp_epsilon(); }

  bool inside(double u) const { return u > u_min_ && u < u_max_; }

  double f(double u) const { return profile_.value(u); }
  double df(double u) const { return profile_.d1(u); }
  double d2f(double u) const { return profile_.d2(u); }

 private:
  double u_min_, u_max_;
  Profile profile_;
  int fiber_dim_;
  double fiber_period_;
  double clamp_fraction_;
};

/// Uniform nodes on a sub-interval of the quotient.
class QuotientGrid {
 public:
  QuotientGrid() = default;

  static QuotientGrid uniform(double lo, double hi, std::size_t n) {
    if (n < 2) throw ConfigError("quotient grid needs >= 2 nodes");
    if (!(hi > lo)) throw ConfigError("quotient grid: hi must exceed lo");
    QuotientGrid g;
    g.h_ = (hi - lo) / static_cast<double>(n - 1);
    g.nodes_.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.nodes_[i] = lo + g.h_ * static_cast<double>(i);
    g.nodes_.back() = hi;
    return g;
  }

  /// Uniform grid checked against the principal stratum of `mf`.
  static QuotientGrid uniform(const WarpedManifold& mf, double lo, double hi, std::size_t n) {
    if (!mf.inside(lo) || !mf.inside(hi)) {
      std::ostringstream os;
      os << "quotient grid [" << lo << ", " << hi << "] leaves the principal stratum ("
         << mf.u_min() << ", " << mf.u_max() << ")";
      throw DomainError(os.str());
    }
    return uniform(lo, hi, n);
  }

  std::size_t size() const { return nodes_.size(); }
  double spacing() const { return h_; }
  double operator[](std::size_t i) const { return nodes_[i]; }
  std::span<const double> nodes() const { return nodes_; }
  double front() const { return nodes_.front(); }
  double back() const { return nodes_.back(); }

  friend bool operator==(const QuotientGrid& a, const QuotientGrid& b) {
    return a.nodes_ == b.nodes_;
  }

 private:
  std::vector<double> nodes_;
  double h_ = 0;
};

namespace detail {
inline void require_inside(const WarpedManifold& mf, double u, const char* op) {
  if (!mf.inside(u)) {
    std::ostringstream os;
    os << op << ": u = " << u << " outside (" << mf.u_min() << ", " << mf.u_max() << ")";
    throw DomainError(os.str());
  }
}
}  // namespace detail

/// Density of pi_* vol with respect to du: f(u)^m * period^m.
inline double quotient_volume_density(const WarpedManifold& mf, double u) {
  detail::require_inside(mf, u, "quotient_volume_density");
  return std::pow(mf.f(u), mf.fiber_dim()) * mf.fiber_volume();
}

/// Ric(d/du) = -m f''(u) / f(u).
inline double horizontal_ricci(const WarpedManifold& mf, double u) {
  detail::require_inside(mf, u, "horizontal_ricci");
  const double fu = mf.f(u);
  if (!(fu > 0)) throw SingularOrbitError("horizontal_ricci: f(u) <= 0 (singular orbit)");
  return 0.0 - mf.fiber_dim() * mf.d2f(u) / fu;
}

/// Central-difference estimate of horizontal_ricci using only values of f.
inline double horizontal_ricci_fd(const WarpedManifold& mf, double u, double h) {
  if (!(h > 0)) throw DomainError("horizontal_ricci_fd: h must be > 0");
  if (!mf.inside(u - h) || !mf.inside(u + h)) {
    throw DomainError("horizontal_ricci_fd: stencil leaves the domain");
  }
  const double fu = mf.f(u);
  if (!(fu > 0)) throw SingularOrbitError("horizontal_ricci_fd: f(u) <= 0 (singular orbit)");
  const double second = (mf.f(u + h) - 2.0 * fu + mf.f(u - h)) / (h * h);
  return -mf.fiber_dim() * second / fu;
}

/// Endpoint of the meridian through u with velocity v after time t.
inline double exp_horizontal(const WarpedManifold& mf, double u, double v, double t) {
  const double end = u + t * v;
  if (end < mf.u_min() || end > mf.u_max()) {
    const double wall = (end < mf.u_min()) ? mf.u_min() : mf.u_max();
    const double exit_time = (v != 0.0) ? (wall - u) / v : 0.0;
    std::ostringstream os;
    os << "geodesic from u = " << u << " with velocity " << v << " leaves ["
       << mf.u_min() << ", " << mf.u_max() << "] at time " << exit_time;
    throw GeodesicEscapeError(os.str(), exit_time);
  }
  return end;
}

/// The closed conformal field f(u) d/du, scaled to have speed `speed` at u0.
/// Its potential has Hessian proportional to the metric (Hess psi = f' g / f(u0) * speed),
/// so the trace-free part of the Jacobian equation starts at zero.
inline std::function<double(double)> conformal_field(const WarpedManifold& mf, double u0,
                                                     double speed) {
  const double f0 = mf.f(u0);
  if (!(f0 > 0)) throw SingularOrbitError("conformal_field: f(u0) <= 0");
  return [mf, f0, speed](double u) { return speed * mf.f(u) / f0; };
}

/// One sample of delta(t) = J(t)^(1/N) along a transported particle.
struct DeltaSample {
  double t;
  double delta;
};

/// max over interior samples of |N delta''/delta + Ric(d/du) v0^2| along the
/// meridian u(t) = u0 + t v0. For a one-dimensional quotient the trace-free
/// Hilbert-Schmidt term of the Jacobian equation is absent, so the reduced
/// identity N delta''/delta = -Ric(gamma') is what is tested.
inline double riccati_defect(const WarpedManifold& mf, double u0, double v0,
                             std::span<const DeltaSample> samples) {
  const std::size_t n = samples.size();
  if (n < 5) throw InsufficientDataError("riccati_defect: need >= 5 samples");
  const double dt = samples[1].t - samples[0].t;
  if (!(dt > 0)) throw InsufficientDataError("riccati_defect: times must increase");
  for (std::size_t i = 1; i < n; ++i) {
    const double step = samples[i].t - samples[i - 1].t;
    if (std::abs(step - dt) > 1e-9 * std::max(1.0, std::abs(dt))) {
      throw InsufficientDataError("riccati_defect: samples must be uniformly spaced");
    }
  }
  const double big_n = mf.dim();
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double d2 =
        (samples[i + 1].delta - 2.0 * samples[i].delta + samples[i - 1].delta) / (dt * dt);
    const double u = u0 + samples[i].t * v0;
    const double ric = horizontal_ricci(mf, u);
    worst = std::max(worst, std::abs(big_n * d2 / samples[i].delta + ric * v0 * v0));
  }
  return worst;
}

}  // namespace orbitcurv
