#pragma once

// Cubic Hermite spline trajectories: basis evaluation, Catmull-Rom tangent
// construction, position/rotation queries, and linear least-squares fitting
// of keyframe positions to timed 3D samples.
//
// Tangents are never free parameters: they are Catmull-Rom functions of the
// keyframe positions, which keeps the fit a linear least-squares problem.

#include "splatnodes/core.hpp"
#include "splatnodes/rigid_math.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace splatnodes {

struct HermiteBasis {
  double h00 = 0.0;
  double h10 = 0.0;
  double h01 = 0.0;
  double h11 = 0.0;
};

// h00 = 2t^3 - 3t^2 + 1, h10 = t^3 - 2t^2 + t,
// h01 = -2t^3 + 3t^2,   h11 = t^3 - t^2, for tau in [0, 1].
inline HermiteBasis hermite_basis(double tau) {
  if (tau < -1e-12 || tau > 1.0 + 1e-12)
    throw OutOfRange("hermite_basis: tau outside [0, 1]");
  tau = std::clamp(tau, 0.0, 1.0);
  const double t2 = tau * tau;
  const double t3 = t2 * tau;
  return {2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + tau, -2.0 * t3 + 3.0 * t2,
          t3 - t2};
}

// Interior tangent k: (P_{k+1} - P_{k-1}) / (t_{k+1} - t_{k-1});
// endpoints use one-sided differences.
inline std::vector<Vec3> catmull_rom_tangents(std::span<const double> times,
                                              std::span<const Vec3> positions) {
  const size_t n = times.size();
  if (n < 2 || positions.size() != n)
    throw std::invalid_argument("catmull_rom_tangents: need >= 2 matched samples");
  std::vector<Vec3> tangents(n);
  tangents.front() = (positions[1] - positions[0]) / (times[1] - times[0]);
  tangents.back() = (positions[n - 1] - positions[n - 2]) / (times[n - 1] - times[n - 2]);
  for (size_t k = 1; k + 1 < n; ++k)
    tangents[k] = (positions[k + 1] - positions[k - 1]) / (times[k + 1] - times[k - 1]);
  return tangents;
}

// Per-node trajectory: keyframed positions with Catmull-Rom-compatible
// tangents and per-keyframe rotations. Position queries use the cubic
// Hermite interpolant; rotation queries use slerp between keyframes.
// Immutable after construction apart from whole-keyframe updates.
class SplineTrajectory {
 public:
  SplineTrajectory(std::vector<double> times, std::vector<Vec3> positions,
                   std::vector<Vec3> tangents, std::vector<UnitQuaternion> rotations)
      : times_(std::move(times)),
        positions_(std::move(positions)),
        tangents_(std::move(tangents)),
        rotations_(std::move(rotations)) {
    validate();
  }

  // Positions with Catmull-Rom tangents and identity rotations.
  static SplineTrajectory from_positions(std::vector<double> times,
                                         std::vector<Vec3> positions) {
    auto tangents = catmull_rom_tangents(times, positions);
    std::vector<UnitQuaternion> rotations(times.size());
    return SplineTrajectory(std::move(times), std::move(positions),
                            std::move(tangents), std::move(rotations));
  }

  // Static trajectory pinned at one point over [0, 1].
  static SplineTrajectory constant(const Vec3& p) {
    return SplineTrajectory({0.0, 1.0}, {p, p}, {Vec3::Zero(), Vec3::Zero()},
                            {UnitQuaternion(), UnitQuaternion()});
  }

  const std::vector<double>& times() const { return times_; }
  const std::vector<Vec3>& positions() const { return positions_; }
  const std::vector<Vec3>& tangents() const { return tangents_; }
  const std::vector<UnitQuaternion>& rotations() const { return rotations_; }
  size_t keyframe_count() const { return times_.size(); }
  double span_begin() const { return times_.front(); }
  double span_end() const { return times_.back(); }

  bool covers(double t0, double t1) const {
    return span_begin() <= t0 + 1e-9 && span_end() >= t1 - 1e-9;
  }

  // Replaces keyframe positions, recomputing Catmull-Rom tangents.
  void set_positions(std::vector<Vec3> positions) {
    if (positions.size() != times_.size())
      throw std::invalid_argument("set_positions: keyframe count mismatch");
    tangents_ = catmull_rom_tangents(times_, positions);
    positions_ = std::move(positions);
  }

  void set_rotation(size_t k, const UnitQuaternion& q) { rotations_.at(k) = q; }

  Vec3 position_at(double t) const {
    const auto [k, tau] = locate(t);
    const HermiteBasis h = hermite_basis(tau);
    const double dt = times_[k + 1] - times_[k];
    return h.h00 * positions_[k] + h.h10 * dt * tangents_[k] +
           h.h01 * positions_[k + 1] + h.h11 * dt * tangents_[k + 1];
  }

  UnitQuaternion rotation_at(double t) const {
    const auto [k, tau] = locate(t);
    return slerp(rotations_[k], rotations_[k + 1], tau);
  }

  // Segment index and normalized local parameter for a query time.
  std::pair<size_t, double> locate(double t) const {
    if (t < times_.front() - 1e-12 || t > times_.back() + 1e-12)
      throw OutOfRange("trajectory query outside keyframe span");
    t = std::clamp(t, times_.front(), times_.back());
    size_t k = std::upper_bound(times_.begin(), times_.end(), t) - times_.begin();
    k = std::clamp<size_t>(k, 1, times_.size() - 1) - 1;
    return {k, (t - times_[k]) / (times_[k + 1] - times_[k])};
  }

 private:
  void validate() const {
    const size_t n = times_.size();
    if (n < 2) throw std::invalid_argument("trajectory needs >= 2 keyframes");
    if (positions_.size() != n || tangents_.size() != n || rotations_.size() != n)
      throw std::invalid_argument("trajectory keyframe lists differ in length");
    for (size_t k = 0; k < n; ++k) {
      if (times_[k] < -1e-12 || times_[k] > 1.0 + 1e-12)
        throw std::invalid_argument("keyframe times must lie in [0, 1]");
      if (k > 0 && times_[k] - times_[k - 1] < 1e-6)
        throw std::invalid_argument("keyframe times must increase by >= 1e-6");
    }
  }

  std::vector<double> times_;
  std::vector<Vec3> positions_;
  std::vector<Vec3> tangents_;
  std::vector<UnitQuaternion> rotations_;
};

// Weights a_k(t) such that position_at(t) = sum_k a_k(t) * P_k once tangents
// are the Catmull-Rom functions of the positions. At most four are nonzero;
// they always sum to 1. Shared by the fitter and by every position gradient.
inline std::vector<double> position_weights(std::span<const double> times, double t) {
  const size_t n = times.size();
  std::vector<double> w(n, 0.0);
  if (t < times.front() - 1e-12 || t > times.back() + 1e-12)
    throw OutOfRange("position_weights: query outside keyframe span");
  t = std::clamp(t, times.front(), times.back());
  size_t k = std::upper_bound(times.begin(), times.end(), t) - times.begin();
  k = std::clamp<size_t>(k, 1, n - 1) - 1;
  const double dt = times[k + 1] - times[k];
  const HermiteBasis h = hermite_basis((t - times[k]) / dt);

  w[k] += h.h00;
  w[k + 1] += h.h01;

  // Scatter the tangent contribution dP_j = sum c_i P_i into the weights.
  auto add_tangent = [&](size_t j, double coeff) {
    if (j == 0) {
      const double inv = 1.0 / (times[1] - times[0]);
      w[1] += coeff * inv;
      w[0] -= coeff * inv;
    } else if (j == n - 1) {
      const double inv = 1.0 / (times[n - 1] - times[n - 2]);
      w[n - 1] += coeff * inv;
      w[n - 2] -= coeff * inv;
    } else {
      const double inv = 1.0 / (times[j + 1] - times[j - 1]);
      w[j + 1] += coeff * inv;
      w[j - 1] -= coeff * inv;
    }
  };
  add_tangent(k, h.h10 * dt);
  add_tangent(k + 1, h.h11 * dt);
  return w;
}

struct TimedSample {
  double t = 0.0;
  Vec3 x = Vec3::Zero();
};

struct SplineFit {
  SplineTrajectory trajectory;
  double residual = 0.0;  // sum of squared sample errors at the solution
};

// Ridge strength on the normal equations. Keeps keyframes in unsampled
// intervals bounded; two refinement passes remove its bias on the
// well-determined directions.
inline constexpr double kFitRidge = 1e-8;

// Least-squares fit of keyframe positions to timed samples. Tangents are
// Catmull-Rom, so the problem is linear; rotations initialize to identity.
inline SplineFit fit_spline(std::span<const TimedSample> samples,
                            std::vector<double> keyframe_times) {
  if (samples.empty()) throw std::invalid_argument("fit_spline: no samples");
  const size_t n = keyframe_times.size();
  {
    // Reuse trajectory validation for the keyframe grid.
    std::vector<Vec3> zeros(n, Vec3::Zero());
    SplineTrajectory probe = SplineTrajectory::from_positions(keyframe_times, zeros);
    (void)probe;
  }

  Eigen::MatrixXd a(samples.size(), n);
  Eigen::MatrixXd rhs(samples.size(), 3);
  for (size_t s = 0; s < samples.size(); ++s) {
    const auto w = position_weights(keyframe_times, samples[s].t);
    for (size_t j = 0; j < n; ++j) a(s, j) = w[j];
    rhs.row(s) = samples[s].x.transpose();
  }

  const Eigen::MatrixXd normal = a.transpose() * a;
  const Eigen::MatrixXd b = a.transpose() * rhs;
  Eigen::MatrixXd ridged = normal;
  ridged.diagonal().array() += kFitRidge;
  const auto solver = ridged.ldlt();
  if (solver.info() != Eigen::Success)
    throw RankDeficient("fit_spline: normal equations unsolvable");

  Eigen::MatrixXd p = solver.solve(b);
  // Iterated Tikhonov: drives the ridge bias on well-conditioned
  // directions from O(ridge) down to O(ridge^3).
  for (int pass = 0; pass < 2; ++pass) p += solver.solve(b - normal * p);
  if (!p.allFinite()) throw RankDeficient("fit_spline: non-finite solution");

  std::vector<Vec3> positions(n);
  for (size_t j = 0; j < n; ++j) positions[j] = p.row(j).transpose();

  const double residual = (a * p - rhs).squaredNorm();
  return {SplineTrajectory::from_positions(std::move(keyframe_times),
                                           std::move(positions)),
          residual};
}

inline SplineFit fit_spline(const std::vector<TimedSample>& samples,
                            std::vector<double> keyframe_times) {
  return fit_spline(std::span<const TimedSample>(samples), std::move(keyframe_times));
}

// Uniform keyframe grid over [0, 1].
inline std::vector<double> uniform_keyframes(int count) {
  if (count < 2) throw std::invalid_argument("need >= 2 keyframes");
  std::vector<double> times(count);
  for (int k = 0; k < count; ++k) times[k] = static_cast<double>(k) / (count - 1);
  return times;
}

}  // namespace splatnodes
