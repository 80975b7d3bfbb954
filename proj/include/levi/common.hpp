#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace levi {

using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A physical or configuration parameter is out of its valid range.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Field evaluated too close to a transducer face, where the far-field
/// piston model does not apply.
class SingularPoint : public Error {
 public:
  using Error::Error;
};

/// Query outside the lookup-table volume.
class OutOfVolume : public Error {
 public:
  using Error::Error;
};

/// Wraps an angle into [0, 2pi).
inline double wrap_phase(double phi) {
  double w = std::fmod(phi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  // fmod of a tiny negative number can round up to exactly 2pi
  if (w >= kTwoPi) w = 0.0;
  return w;
}

/// Wraps an angle difference into (-pi, pi].
inline double wrap_signed(double delta) {
  double w = std::remainder(delta, kTwoPi);
  if (w <= -std::numbers::pi) w += kTwoPi;
  return w;
}

/// Shortest angular distance between two phases, in [0, pi].
inline double circular_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

}  // namespace levi
