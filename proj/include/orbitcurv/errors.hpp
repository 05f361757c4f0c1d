#pragma once

#include <stdexcept>
#include <string>

namespace orbitcurv {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of an operation (u outside I, r < 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Profile vanishes at the evaluation point (singular orbit).
class SingularOrbitError : public Error {
 public:
  using Error::Error;
};

/// A horizontal geodesic leaves the principal stratum before its end time.
class GeodesicEscapeError : public Error {
 public:
  GeodesicEscapeError(const std::string& what, double exit_time)
      : Error(what), exit_time_(exit_time) {}
  double exit_time() const noexcept { return exit_time_; }

 private:
  double exit_time_;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Grids or arrays that must be congruent are not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Mass bookkeeping failed: non-integrable weights, mismatched marginals, empty support.
class MassError : public Error {
 public:
  using Error::Error;
};

class DegenerateMeasureError : public Error {
 public:
  using Error::Error;
};

/// Transport Jacobian collapsed (crossing particle paths).
class CausticError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace orbitcurv
