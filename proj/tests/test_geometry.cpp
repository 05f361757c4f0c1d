#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "orbitcurv/geometry.hpp"
#include "orbitcurv/quadrature.hpp"
#include "orbitcurv/transport.hpp"

using namespace orbitcurv;
using std::numbers::pi;

namespace {

WarpedManifold plane() { return WarpedManifold(0.0, 3.0, Profile::linear()); }
WarpedManifold cylinder() { return WarpedManifold(-1.0, 1.0, Profile::constant(1.0)); }
WarpedManifold sphere(int m = 1) { return WarpedManifold(0.0, pi, Profile::sin(), m); }
WarpedManifold cosh_mf() { return WarpedManifold(-1.0, 1.0, Profile::cosh()); }

}  // namespace

// ---------------------------------------------------------------------------
// Construction and invariants.

TEST(WarpedManifold, DimensionIsFiberDimPlusOne) {
  for (int m = 1; m <= 3; ++m) EXPECT_EQ(WarpedManifold(0, pi, Profile::sin(), m).dim(), m + 1);
}

TEST(WarpedManifold, RejectsBadInterval) {
  EXPECT_THROW(WarpedManifold(1.0, 1.0, Profile::constant()), ConfigError);
  EXPECT_THROW(WarpedManifold(2.0, 1.0, Profile::constant()), ConfigError);
}

TEST(WarpedManifold, RejectsBadFiberParameters) {
  EXPECT_THROW(WarpedManifold(0, 1, Profile::constant(), 0), ConfigError);
  EXPECT_THROW(WarpedManifold(0, 1, Profile::constant(), 1, 0.0), ConfigError);
  EXPECT_THROW(WarpedManifold(0, 1, Profile::constant(), 1, kTwoPi, 0.5), ConfigError);
}

TEST(WarpedManifold, RejectsProfileVanishingInside) {
  // sin vanishes at pi, inside (0, 4).
  EXPECT_THROW(WarpedManifold(0.0, 4.0, Profile::sin()), ConfigError);
  EXPECT_THROW(WarpedManifold(-1.0, 1.0, Profile::linear()), ConfigError);
}

TEST(WarpedManifold, ProfileMayVanishAtEndpoints) {
  EXPECT_NO_THROW(sphere());
  EXPECT_NO_THROW(plane());
}

TEST(WarpedManifold, ClampedSupportExcludesEndpoints) {
  const auto mf = sphere();
  EXPECT_NEAR(mf.clamp_epsilon(), 1e-3 * pi, 1e-15);
  EXPECT_GT(mf.support_lo(), mf.u_min());
  EXPECT_LT(mf.support_hi(), mf.u_max());
  EXPECT_FALSE(mf.inside(0.0));
  EXPECT_FALSE(mf.inside(pi));
  EXPECT_TRUE(mf.inside(1.0));
}

TEST(WarpedManifold, FiberVolumeIsPeriodToTheM) {
  EXPECT_NEAR(sphere(2).fiber_volume(), kTwoPi * kTwoPi, 1e-12);
  EXPECT_NEAR(WarpedManifold(0, 1, Profile::constant(), 1, 3.0).fiber_volume(), 3.0, 1e-15);
}

TEST(QuotientGrid, UniformNodesStrictlyIncreasingInsideStratum) {
  const auto mf = sphere();
  const auto g = QuotientGrid::uniform(mf, 0.5, 2.5, 101);
  ASSERT_EQ(g.size(), 101u);
  EXPECT_NEAR(g.spacing(), 0.02, 1e-15);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g[i], g[i - 1]);
  for (double u : g.nodes()) EXPECT_TRUE(mf.inside(u));
  EXPECT_EQ(g.back(), 2.5);
}

TEST(QuotientGrid, RejectsNodesOnSingularOrbit) {
  EXPECT_THROW(QuotientGrid::uniform(sphere(), 0.0, 1.0, 10), DomainError);
  EXPECT_THROW(QuotientGrid::uniform(sphere(), 1.0, pi, 10), DomainError);
}

TEST(QuotientGrid, RejectsDegenerateGrids) {
  EXPECT_THROW(QuotientGrid::uniform(0.0, 1.0, 1), ConfigError);
  EXPECT_THROW(QuotientGrid::uniform(1.0, 0.0, 10), ConfigError);
}

// ---------------------------------------------------------------------------
// Profiles.

TEST(Profile, PresetDerivatives) {
  EXPECT_DOUBLE_EQ(Profile::sin().d2(0.7), -std::sin(0.7));
  EXPECT_DOUBLE_EQ(Profile::cosh().d1(0.3), std::sinh(0.3));
  EXPECT_DOUBLE_EQ(Profile::sinh().d2(0.3), std::sinh(0.3));
  EXPECT_DOUBLE_EQ(Profile::linear(2.0, 1.0).value(3.0), 7.0);
  EXPECT_DOUBLE_EQ(Profile::linear(2.0, 1.0).d2(3.0), 0.0);
  EXPECT_DOUBLE_EQ(Profile::constant(4.0).d1(1.0), 0.0);
}

TEST(Profile, SplineInterpolatesKnotsAndReproducesLines) {
  const std::vector<double> x{0, 0.5, 1.0, 2.0};
  const std::vector<double> y{1, 2, 3, 5};
  const auto s = Profile::spline(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(s.value(x[i]), y[i], 1e-14);
  // Data on a line: natural spline is that line, f'' = 0.
  EXPECT_NEAR(s.value(1.5), 4.0, 1e-12);
  EXPECT_NEAR(s.d1(0.25), 2.0, 1e-12);
  EXPECT_NEAR(s.d2(0.75), 0.0, 1e-12);
}

TEST(Profile, SplineSecondDerivativeIsAnalyticAndContinuous) {
  std::vector<double> x, y;
  for (int i = 0; i <= 40; ++i) {
    x.push_back(0.1 + 2.9 * i / 40.0);
    y.push_back(std::sin(x.back()));
  }
  const auto s = Profile::spline(x, y);
  const double h = 1e-6;
  for (double u : {0.8, 1.3, 1.7, 2.2}) {
    EXPECT_NEAR(s.d1(u), (s.value(u + h) - s.value(u - h)) / (2 * h), 1e-7);
    EXPECT_NEAR(s.d2(u), -std::sin(u), 2e-3);
  }
  const double k = x[20];
  EXPECT_NEAR(s.d2(k - 1e-12), s.d2(k + 1e-12), 1e-9);
}

TEST(Profile, SplineRejectsBadKnots) {
  EXPECT_THROW(Profile::spline({0, 1}, {1, 1}), ConfigError);
  EXPECT_THROW(Profile::spline({0, 1, 1}, {1, 1, 1}), ConfigError);
  EXPECT_THROW(Profile::spline({0, 1, 2}, {1, 1}), ConfigError);
}

// ---------------------------------------------------------------------------
// quotient_volume_density.

TEST(QuotientVolumeDensity, PlaneIsTwoPiR) {
  EXPECT_NEAR(quotient_volume_density(plane(), 2.0), 4 * pi, 1e-14);
}

TEST(QuotientVolumeDensity, CylinderIsPeriod) {
  const WarpedManifold mf(-1, 1, Profile::constant(1.0), 1, 3.5);
  for (double u : {-0.9, 0.0, 0.4}) EXPECT_NEAR(quotient_volume_density(mf, u), 3.5, 1e-15);
}

TEST(QuotientVolumeDensity, TwoSphereFiberAtEquator) {
  EXPECT_NEAR(quotient_volume_density(sphere(2), pi / 2), kTwoPi * kTwoPi, 1e-12);
}

TEST(QuotientVolumeDensity, OutsideDomainThrows) {
  EXPECT_THROW(quotient_volume_density(sphere(), 0.0), DomainError);
  EXPECT_THROW(quotient_volume_density(sphere(), 4.0), DomainError);
}

TEST(QuotientVolumeDensity, PositiveOnPrincipalStratum) {
  for (const auto& mf : {sphere(), plane(), cosh_mf(), sphere(3)}) {
    const auto g = QuotientGrid::uniform(mf, mf.support_lo(), mf.support_hi(), 257);
    for (double u : g.nodes()) EXPECT_GT(quotient_volume_density(mf, u), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Curvature oracles.

TEST(HorizontalRicci, SphereIsOne) { EXPECT_NEAR(horizontal_ricci(sphere(), 1.0), 1.0, 1e-15); }

TEST(HorizontalRicci, PlaneIsZero) {
  for (double u : {0.1, 1.0, 2.9}) EXPECT_EQ(horizontal_ricci(plane(), u), 0.0);
}

TEST(HorizontalRicci, CoshIsMinusOne) { EXPECT_NEAR(horizontal_ricci(cosh_mf(), 0.5), -1.0, 1e-15); }

TEST(HorizontalRicci, ScalesWithFiberDimension) {
  EXPECT_NEAR(horizontal_ricci(sphere(3), 1.2), 3.0, 1e-14);
}

TEST(HorizontalRicci, SingularOrbitThrows) {
  EXPECT_THROW(horizontal_ricci(sphere(), 0.0), DomainError);
  EXPECT_THROW(horizontal_ricci(sphere(), pi), DomainError);
}

TEST(HorizontalRicciFd, SphereMatchesAnalytic) {
  EXPECT_NEAR(horizontal_ricci_fd(sphere(), 1.0, 1e-3), 1.0, 1e-5);
}

TEST(HorizontalRicciFd, CylinderIsZero) {
  EXPECT_NEAR(horizontal_ricci_fd(cylinder(), 0.0, 1e-3), 0.0, 1e-12);
}

TEST(HorizontalRicciFd, CoshMatchesAnalytic) {
  EXPECT_NEAR(horizontal_ricci_fd(cosh_mf(), 0.0, 1e-3), -1.0, 1e-5);
}

TEST(HorizontalRicciFd, StencilLeavingDomainThrows) {
  EXPECT_THROW(horizontal_ricci_fd(sphere(), 1e-4, 1e-3), DomainError);
  EXPECT_THROW(horizontal_ricci_fd(sphere(), 1.0, 0.0), DomainError);
}

TEST(HorizontalRicciFd, SecondOrderConvergenceAgainstClosedForm) {
  // Spline profile with nonconstant curvature.
  std::vector<double> x, y;
  for (int i = 0; i <= 20; ++i) {
    x.push_back(0.2 + 2.0 * i / 20.0);
    y.push_back(1.0 + 0.3 * std::sin(2 * x.back()) + 0.1 * x.back() * x.back());
  }
  const WarpedManifold spline_mf(0.2, 2.2, Profile::spline(x, y));
  const WarpedManifold sinh_mf(0.0, 2.0, Profile::sinh());
  for (double u : {0.71, 1.13}) {
    const double exact = horizontal_ricci(sinh_mf, u);
    const double e2 = std::abs(horizontal_ricci_fd(sinh_mf, u, 1e-2) - exact);
    const double e3 = std::abs(horizontal_ricci_fd(sinh_mf, u, 1e-3) - exact);
    ASSERT_GT(e2, 0.0);
    EXPECT_GT(e2 / e3, 50.0) << "u = " << u;
    EXPECT_LT(e2 / e3, 200.0) << "u = " << u;
    // Central differences are exact on each cubic piece of the spline.
    EXPECT_NEAR(horizontal_ricci_fd(spline_mf, u, 1e-3), horizontal_ricci(spline_mf, u), 1e-6);
  }
}

// ---------------------------------------------------------------------------
// exp_horizontal.

TEST(ExpHorizontal, ArcLengthMeridian) {
  const auto mf = sphere();
  EXPECT_DOUBLE_EQ(exp_horizontal(mf, 0.3, 0.2, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(exp_horizontal(mf, 0.3, 0.2, 0.0), 0.3);
}

TEST(ExpHorizontal, EscapeReportsExitTime) {
  try {
    exp_horizontal(sphere(), 3.0, 0.2, 1.0);
    FAIL() << "expected an escape";
  } catch (const GeodesicEscapeError& e) {
    EXPECT_NEAR(e.exit_time(), (pi - 3.0) / 0.2, 1e-12);
  }
}

TEST(ExpHorizontal, EscapeThroughLowerEnd) {
  try {
    exp_horizontal(plane(), 0.5, -1.0, 1.0);
    FAIL() << "expected an escape";
  } catch (const GeodesicEscapeError& e) {
    EXPECT_NEAR(e.exit_time(), 0.5, 1e-15);
  }
}

TEST(ExpHorizontal, FlowProperty) {
  const auto mf = sphere();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uu(1.0, 2.0), vv(-0.5, 0.5), tt(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const double u = uu(rng), v = vv(rng), s = tt(rng), t = tt(rng);
    const double direct = exp_horizontal(mf, u, v, s + t);
    const double composed = exp_horizontal(mf, exp_horizontal(mf, u, v, s), v, t);
    EXPECT_NEAR(direct, composed, 4e-16 * std::max(1.0, std::abs(direct)));
  }
}

// ---------------------------------------------------------------------------
// riccati_defect.

namespace {

/// delta(t) at the centre particle of a conformal map on a local grid.
std::vector<DeltaSample> conformal_deltas(const WarpedManifold& mf, double u0, double v0,
                                          std::size_t intervals, double half_width = 0.05) {
  const auto grid = QuotientGrid::uniform(mf, u0 - half_width, u0 + half_width, 65);
  std::vector<double> dens(grid.size(), 1.0);
  const auto mu0 = make_quotient_measure(mf, grid, dens, true);
  const auto map = conformal_monge(mf, grid, u0, v0);
  const auto times = uniform_times(intervals);
  const auto path = displacement_interpolate(mf, mu0, map, times);
  std::vector<DeltaSample> out;
  for (double t : times) out.push_back({t, transport_jacobian(path, t, grid[32], mf).delta});
  return out;
}

}  // namespace

TEST(RiccatiDefect, CylinderIsFlat) {
  const auto mf = cylinder();
  std::vector<DeltaSample> s;
  for (int i = 0; i <= 16; ++i) s.push_back({i / 16.0, 1.0});
  EXPECT_LE(riccati_defect(mf, 0.0, 0.3, s), 1e-8);
  EXPECT_LE(riccati_defect(mf, -0.2, 0.5, conformal_deltas(mf, -0.2, 0.5, 16)), 1e-8);
}

TEST(RiccatiDefect, SphereDefectDecaysAtLeastCubically) {
  const auto mf = sphere();
  const double d1 = riccati_defect(mf, pi / 2, 1e-2, conformal_deltas(mf, pi / 2, 1e-2, 64));
  const double d2 = riccati_defect(mf, pi / 2, 5e-3, conformal_deltas(mf, pi / 2, 5e-3, 64));
  EXPECT_LT(d1, 1e-5);
  // Halving |v0| divides an O(|v0|^3) defect by at least ~8.
  EXPECT_GT(d1 / d2, 7.0);
}

TEST(RiccatiDefect, PlaneConformalTrajectory) {
  const auto mf = plane();
  EXPECT_LE(riccati_defect(mf, 1.0, 1e-3, conformal_deltas(mf, 1.0, 1e-3, 64)), 1e-6);
}

TEST(RiccatiDefect, DetectsWrongCurvature) {
  // delta = 1 everywhere is consistent with Ric = 0 only.
  std::vector<DeltaSample> s;
  for (int i = 0; i <= 16; ++i) s.push_back({i / 16.0, 1.0});
  EXPECT_NEAR(riccati_defect(sphere(), 1.2, 0.1, s), 0.01, 1e-12);
}

TEST(RiccatiDefect, NeedsFiveUniformSamples) {
  std::vector<DeltaSample> s{{0, 1}, {0.25, 1}, {0.5, 1}, {0.75, 1}};
  EXPECT_THROW(riccati_defect(sphere(), 1.0, 0.1, s), InsufficientDataError);
  s.push_back({1.5, 1});
  EXPECT_THROW(riccati_defect(sphere(), 1.0, 0.1, s), InsufficientDataError);
}

TEST(ConformalField, SpeedAtBasePointAndScaling) {
  const auto mf = sphere();
  const auto v = conformal_field(mf, 1.0, 0.3);
  EXPECT_NEAR(v(1.0), 0.3, 1e-15);
  EXPECT_NEAR(v(1.4), 0.3 * std::sin(1.4) / std::sin(1.0), 1e-15);
  EXPECT_THROW(conformal_field(mf, 0.0, 0.3), SingularOrbitError);
}

// ---------------------------------------------------------------------------
// Quadrature helpers.

TEST(Quadrature, TrapezoidWeightsIntegrateLinearsExactly) {
  const std::vector<double> x{0.0, 0.1, 0.35, 0.4, 1.0};
  const auto w = trapezoid_weights(x);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * (2 * x[i] + 1);
  EXPECT_NEAR(s, 2.0, 1e-15);
}

TEST(Quadrature, PeriodicWeightsSpectralAccuracy) {
  const auto w = periodic_weights(32, kTwoPi);
  double s = 0;
  for (std::size_t j = 0; j < 32; ++j) s += w[j] * std::exp(std::cos(kTwoPi * j / 32));
  EXPECT_NEAR(s, kTwoPi * std::cyl_bessel_i(0.0, 1.0), 1e-13);
}

TEST(Quadrature, LogLogSlopeOfPowerLaw) {
  const std::vector<double> x{0.1, 0.05, 0.025};
  const std::vector<double> y{3e-3, 3e-3 / 8, 3e-3 / 64};
  EXPECT_NEAR(loglog_slope(x, y), 3.0, 1e-12);
}
