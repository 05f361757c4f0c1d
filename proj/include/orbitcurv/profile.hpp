#pragma once

// Warping profiles f(u) of a warped product du^2 + f(u)^2 g_fiber.
// Every profile exposes f, f' and f'' analytically; curvature is computed
// from f'' so numerical differentiation never enters the oracle path.

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "orbitcurv/errors.hpp"

namespace orbitcurv {

struct ConstantProfile {
  double value = 1.0;
};

/// f(u) = slope * u + offset.
struct LinearProfile {
  double slope = 1.0;
  double offset = 0.0;
};

struct SinProfile {};
struct CoshProfile {};
struct SinhProfile {};

/// Natural cubic spline through user knots. Second derivatives at the knots
/// are solved once; f'' between knots is the linear interpolant of them.
class SplineProfile {
 public:
  SplineProfile(std::vector<double> knots, std::vector<double> values)
      : x_(std::move(knots)), y_(std::move(values)) {
    const std::size_t n = x_.size();
    if (n < 3 || y_.size() != n) {
      throw ConfigError("spline profile needs >= 3 knots with matching values");
    }
    for (std::size_t i = 1; i < n; ++i) {
      if (!(x_[i] > x_[i - 1])) throw ConfigError("spline knots must be strictly increasing");
    }
    // Thomas algorithm on the interior second-derivative system.
    m_.assign(n, 0.0);
    std::vector<double> c(n, 0.0), d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x_[i] - x_[i - 1];
      const double h1 = x_[i + 1] - x_[i];
      const double a = h0 / 6.0;
      const double b = (h0 + h1) / 3.0;
      const double cc = h1 / 6.0;
      const double rhs = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
      const double denom = b - a * c[i - 1];
      c[i] = cc / denom;
      d[i] = (rhs - a * d[i - 1]) / denom;
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      m_[i] = d[i] - c[i] * m_[i + 1];
    }
  }

  double front() const { return x_.front(); }
  double back() const { return x_.back(); }
  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& values() const { return y_; }

  double value(double u) const { return eval(u, 0); }
  double d1(double u) const { return eval(u, 1); }
  double d2(double u) const { return eval(u, 2); }

 private:
  double eval(double u, int order) const {
    std::size_t k = 0;
    std::size_t hi = x_.size() - 1;
    if (u <= x_.front()) {
      k = 0;
    } else if (u >= x_.back()) {
      k = hi - 1;
    } else {
      std::size_t lo = 0;
      while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (x_[mid] <= u ? lo : hi) = mid;
      }
      k = lo;
    }
    const double h = x_[k + 1] - x_[k];
    const double a = (x_[k + 1] - u) / h;
    const double b = (u - x_[k]) / h;
    switch (order) {
      case 0:
        return a * y_[k] + b * y_[k + 1] +
               ((a * a * a - a) * m_[k] + (b * b * b - b) * m_[k + 1]) * h * h / 6.0;
      case 1:
        return (y_[k + 1] - y_[k]) / h - (3.0 * a * a - 1.0) / 6.0 * h * m_[k] +
               (3.0 * b * b - 1.0) / 6.0 * h * m_[k + 1];
      default:
        return a * m_[k] + b * m_[k + 1];
    }
  }

  std::vector<double> x_, y_, m_;
};

class Profile {
 public:
  using Kind = std::variant<ConstantProfile, LinearProfile, SinProfile, CoshProfile,
                            SinhProfile, SplineProfile>;

  Profile(Kind kind) : kind_(std::move(kind)) {}  // NOLINT: implicit by design of presets

  static Profile constant(double c = 1.0) { return Profile(ConstantProfile{c}); }
  static Profile linear(double slope = 1.0, double offset = 0.0) {
    return Profile(LinearProfile{slope, offset});
  }
  static Profile sin() { return Profile(SinProfile{}); }
  static Profile cosh() { return Profile(CoshProfile{}); }
  static Profile sinh() { return Profile(SinhProfile{}); }
  static Profile spline(std::vector<double> knots, std::vector<double> values) {
    return Profile(SplineProfile(std::move(knots), std::move(values)));
  }

  double value(double u) const {
    return std::visit(
        [u](const auto& p) -> double {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ConstantProfile>) return p.value;
          else if constexpr (std::is_same_v<T, LinearProfile>) return p.slope * u + p.offset;
          else if constexpr (std::is_same_v<T, SinProfile>) return std::sin(u);
          else if constexpr (std::is_same_v<T, CoshProfile>) return std::cosh(u);
          else if constexpr (std::is_same_v<T, SinhProfile>) return std::sinh(u);
          else return p.value(u);
        },
        kind_);
  }

  double d1(double u) const {
    return std::visit(
        [u](const auto& p) -> double {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ConstantProfile>) return 0.0;
          else if constexpr (std::is_same_v<T, LinearProfile>) return p.slope;
          else if constexpr (std::is_same_v<T, SinProfile>) return std::cos(u);
          else if constexpr (std::is_same_v<T, CoshProfile>) return std::sinh(u);
          else if constexpr (std::is_same_v<T, SinhProfile>) return std::cosh(u);
          else return p.d1(u);
        },
        kind_);
  }

  double d2(double u) const {
    return std::visit(
        [u](const auto& p) -> double {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ConstantProfile>) return 0.0;
          else if constexpr (std::is_same_v<T, LinearProfile>) return 0.0;
          else if constexpr (std::is_same_v<T, SinProfile>) return -std::sin(u);
          else if constexpr (std::is_same_v<T, CoshProfile>) return std::cosh(u);
          else if constexpr (std::is_same_v<T, SinhProfile>) return std::sinh(u);
          else return p.d2(u);
        },
        kind_);
  }

  std::string name() const {
    return std::visit(
        [](const auto& p) -> std::string {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ConstantProfile>) return "constant";
          else if constexpr (std::is_same_v<T, LinearProfile>) return "linear";
          else if constexpr (std::is_same_v<T, SinProfile>) return "sin";
          else if constexpr (std::is_same_v<T, CoshProfile>) return "cosh";
          else if constexpr (std::is_same_v<T, SinhProfile>) return "sinh";
          else return "spline";
        },
        kind_);
  }

  const Kind& kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace orbitcurv
