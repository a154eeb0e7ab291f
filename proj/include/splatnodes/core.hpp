#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <stdexcept>
#include <string>

namespace splatnodes {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Base type for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A quaternion expected to be unit-norm deviated too far from 1.
class NonUnitInput : public Error {
 public:
  using Error::Error;
};

// Dual-quaternion blend collapsed (near-zero real part after summation).
class DegenerateBlend : public Error {
 public:
  using Error::Error;
};

// Query parameter outside the valid domain (spline span, basis argument).
class OutOfRange : public Error {
 public:
  using Error::Error;
};

// Least-squares normal equations unsolvable even with the ridge term.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

// Fewer nodes available than the requested neighborhood size.
class InsufficientNodes : public Error {
 public:
  using Error::Error;
};

// Patch back-projection produced no valid candidate.
class EmptyCandidates : public Error {
 public:
  using Error::Error;
};

// Depth must be strictly positive for back-projection.
class NonPositiveDepth : public Error {
 public:
  using Error::Error;
};

// Point has non-positive camera-space depth during projection.
class BehindCamera : public Error {
 public:
  using Error::Error;
};

// Trajectories do not cover the time range an evaluation needs.
class SpanMismatch : public Error {
 public:
  using Error::Error;
};

// Loss turned NaN/inf during optimization.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

// Malformed configuration or data file. Carries a 1-based line number
// when the problem is attributable to a specific line (-1 otherwise).
class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& msg, int line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

inline constexpr int kFormatVersionMajor = 1;
inline constexpr int kFormatVersionMinor = 0;

inline std::string format_version_string() {
  return std::to_string(kFormatVersionMajor) + "." +
         std::to_string(kFormatVersionMinor);
}

// 17 significant digits: doubles survive a text round trip bit-exactly.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace splatnodes
