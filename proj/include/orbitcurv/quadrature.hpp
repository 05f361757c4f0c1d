#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "orbitcurv/errors.hpp"

namespace orbitcurv {

/// Composite trapezoid weights on arbitrary increasing nodes.
inline std::vector<double> trapezoid_weights(std::span<const double> nodes) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 0.0);
  if (n < 2) {
    if (n == 1) w[0] = 0.0;
    return w;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double half = 0.5 * (nodes[i + 1] - nodes[i]);
    w[i] += half;
    w[i + 1] += half;
  }
  return w;
}

/// Trapezoid weights on a uniform grid of n nodes and spacing h.
inline std::vector<double> trapezoid_weights(std::size_t n, double h) {
  std::vector<double> w(n, h);
  if (n > 0) {
    w.front() *= 0.5;
    w.back() *= 0.5;
  }
  return w;
}

/// Periodic trapezoid on n equispaced samples of one period: each weight is
/// period / n. Spectrally accurate for smooth periodic integrands.
inline std::vector<double> periodic_weights(std::size_t n, double period) {
  return std::vector<double>(n, period / static_cast<double>(n));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

/// Least-squares slope of log|y| against log x; used for convergence-order fits.
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InsufficientDataError("loglog_slope: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(std::abs(y[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace orbitcurv
