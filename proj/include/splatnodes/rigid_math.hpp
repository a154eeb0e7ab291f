#pragma once

// Quaternion, dual-quaternion, and SE(3) algebra, including dual
// quaternion blending (DQB) of weighted rigid transforms.
//
// Conventions, fixed for the whole library:
//   - Hamilton quaternion product, w-first storage (w, x, y, z).
//   - Unit dual quaternion Q = real + eps * dual with |real| = 1 and
//     dot(real, dual) = 0.
//   - Canonicalization (w >= 0) is applied only at serialization
//     boundaries, never inside blending.

#include "splatnodes/core.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace splatnodes {

// General quaternion; no norm constraint. Used for dual parts and as the
// arithmetic workhorse behind UnitQuaternion.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Quat() = default;
  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}
  Quat(double w_, const Vec3& v) : w(w_), x(v.x()), y(v.y()), z(v.z()) {}

  Vec3 vec() const { return {x, y, z}; }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  double dot(const Quat& q) const { return w * q.w + x * q.x + y * q.y + z * q.z; }
  double norm() const { return std::sqrt(dot(*this)); }

  Quat operator+(const Quat& q) const { return {w + q.w, x + q.x, y + q.y, z + q.z}; }
  Quat operator-(const Quat& q) const { return {w - q.w, x - q.x, y - q.y, z - q.z}; }
  Quat operator-() const { return {-w, -x, -y, -z}; }
  Quat operator*(double s) const { return {w * s, x * s, y * s, z * s}; }

  // Hamilton product.
  Quat operator*(const Quat& b) const {
    return {w * b.w - x * b.x - y * b.y - z * b.z,
            w * b.x + x * b.w + y * b.z - z * b.y,
            w * b.y - x * b.z + y * b.w + z * b.x,
            w * b.z + x * b.y - y * b.x + z * b.w};
  }
};

inline Quat operator*(double s, const Quat& q) { return q * s; }

// Rotation quaternion. Every constructor normalizes, so the unit invariant
// holds to ~1e-16 at all times; q and -q encode the same rotation.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  UnitQuaternion(double w, double x, double y, double z) : q_(w, x, y, z) { normalize(); }

  explicit UnitQuaternion(const Quat& q) : q_(q) { normalize(); }

  static UnitQuaternion identity() { return {}; }

  // axis_angle = axis * angle (radians). Small-angle safe.
  static UnitQuaternion from_axis_angle(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    const double half = 0.5 * angle;
    // sin(half)/angle, series-expanded near zero
    const double k = angle < 1e-8 ? 0.5 - angle * angle / 48.0 : std::sin(half) / angle;
    Quat q(std::cos(half), axis_angle * k);
    return UnitQuaternion(q);
  }

  static UnitQuaternion from_matrix(const Mat3& m) {
    // Shepperd's method: pick the largest diagonal combination.
    const double t = m.trace();
    Quat q;
    if (t > 0.0) {
      double s = std::sqrt(t + 1.0) * 2.0;
      q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
           (m(1, 0) - m(0, 1)) / s};
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
      double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
      q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
           (m(0, 2) + m(2, 0)) / s};
    } else if (m(1, 1) > m(2, 2)) {
      double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
      q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
           (m(1, 2) + m(2, 1)) / s};
    } else {
      double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
      q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
           (m(1, 2) + m(2, 1)) / s, 0.25 * s};
    }
    return UnitQuaternion(q);
  }

  double w() const { return q_.w; }
  double x() const { return q_.x; }
  double y() const { return q_.y; }
  double z() const { return q_.z; }
  Vec3 vec() const { return q_.vec(); }
  Quat quat() const { return q_; }

  UnitQuaternion conjugate() const {
    UnitQuaternion r;
    r.q_ = q_.conjugate();
    return r;
  }

  double dot(const UnitQuaternion& o) const { return q_.dot(o.q_); }

  UnitQuaternion operator-() const {
    UnitQuaternion r;
    r.q_ = -q_;
    return r;
  }

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2 r x (w v + r x v) for unit quaternions
    const Vec3 r = vec();
    return v + 2.0 * r.cross(q_.w * v + r.cross(v));
  }

  Mat3 matrix() const {
    const double w = q_.w, x = q_.x, y = q_.y, z = q_.z;
    Mat3 m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return m;
  }

  // Double-cover representative with w >= 0. Serialization only.
  UnitQuaternion canonicalized() const { return q_.w < 0.0 ? -(*this) : *this; }

  // Rotation angle in [0, pi] between this and another rotation.
  // atan2 form stays well-conditioned for near-identical rotations.
  double angle_to(const UnitQuaternion& o) const {
    const Quat rel = q_.conjugate() * o.q_;
    return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w));
  }

  Vec3 to_axis_angle() const {
    const UnitQuaternion c = canonicalized();
    const double sin_half = c.vec().norm();
    const double angle = 2.0 * std::atan2(sin_half, c.w());
    if (sin_half < 1e-12) return Vec3::Zero();
    return c.vec() * (angle / sin_half);
  }

 private:
  void normalize() {
    const double n = q_.norm();
    if (n < 1e-12) throw NonUnitInput("quaternion norm too small to normalize");
    q_ = q_ * (1.0 / n);
  }

  Quat q_;
};

// Hamilton product of two rotations; result re-normalized.
inline UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  return UnitQuaternion(a.quat() * b.quat());
}

// Shortest-path spherical interpolation; u in [0, 1].
inline UnitQuaternion slerp(const UnitQuaternion& a, const UnitQuaternion& b, double u) {
  Quat qa = a.quat();
  Quat qb = b.quat();
  double d = qa.dot(qb);
  if (d < 0.0) {
    qb = -qb;
    d = -d;
  }
  if (d > 1.0 - 1e-10) {
    return UnitQuaternion(qa * (1.0 - u) + qb * u);
  }
  const double theta = std::acos(d);
  const double s = std::sin(theta);
  return UnitQuaternion(qa * (std::sin((1.0 - u) * theta) / s) +
                        qb * (std::sin(u * theta) / s));
}

// Rigid transform: x -> R x + t.
struct SE3Pose {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  SE3Pose() = default;
  SE3Pose(const UnitQuaternion& r, const Vec3& t) : rotation(r), translation(t) {}

  static SE3Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }

  SE3Pose compose(const SE3Pose& inner) const {
    return {quat_mul(rotation, inner.rotation),
            rotation.rotate(inner.translation) + translation};
  }

  SE3Pose inverse() const {
    const UnitQuaternion rinv = rotation.conjugate();
    return {rinv, -rinv.rotate(translation)};
  }
};

// Q = real + eps * dual. Unit when |real| = 1 and dot(real, dual) = 0.
struct DualQuaternion {
  Quat real{1, 0, 0, 0};
  Quat dual{0, 0, 0, 0};

  DualQuaternion operator+(const DualQuaternion& o) const {
    return {real + o.real, dual + o.dual};
  }
  DualQuaternion operator-() const { return {-real, -dual}; }
  DualQuaternion operator*(double s) const { return {real * s, dual * s}; }
};

inline DualQuaternion operator*(double s, const DualQuaternion& dq) { return dq * s; }

// Pose to unit dual quaternion: dual = 1/2 * p * real with p the pure
// quaternion of the translation.
inline DualQuaternion se3_to_dq(const SE3Pose& pose) {
  const Quat real = pose.rotation.quat();
  const Quat p(0.0, pose.translation);
  return {real, 0.5 * (p * real)};
}

// Rescales the real part to unit norm and projects the dual part back onto
// the Plucker constraint dot(real, dual) = 0.
inline DualQuaternion dq_normalize(const DualQuaternion& dq) {
  const double n = dq.real.norm();
  if (n <= 1e-12) throw DegenerateBlend("dual quaternion real part vanished");
  Quat real = dq.real * (1.0 / n);
  Quat dual = dq.dual * (1.0 / n);
  dual = dual - real * real.dot(dual);
  return {real, dual};
}

// Unit dual quaternion back to a rigid transform: t = 2 * (dual * conj(real)).
inline SE3Pose dq_to_se3(const DualQuaternion& dq) {
  if (std::abs(dq.real.norm() - 1.0) > 1e-6)
    throw NonUnitInput("dual quaternion real part is not unit; normalize first");
  const UnitQuaternion rotation(dq.real);
  const Quat t = 2.0 * (dq.dual * dq.real.conjugate());
  return {rotation, t.vec()};
}

struct BlendEntry {
  double weight = 0.0;
  DualQuaternion dq;
};

// Dual quaternion blending: normalize(sum_i w_i Q_i) mapped back to SE(3).
// Entries are sign-aligned to the first real part before summation so the
// quaternion double cover cannot cancel contributions.
inline SE3Pose dqb_blend(std::span<const BlendEntry> entries) {
  if (entries.empty()) throw std::invalid_argument("dqb_blend: empty entry list");
  double weight_sum = 0.0;
  for (const auto& e : entries) weight_sum += e.weight;
  if (std::abs(weight_sum - 1.0) > 1e-9)
    throw std::invalid_argument("dqb_blend: weights must sum to 1");

  const Quat ref = entries.front().dq.real;
  DualQuaternion acc{{0, 0, 0, 0}, {0, 0, 0, 0}};
  for (const auto& e : entries) {
    const double sign = ref.dot(e.dq.real) < 0.0 ? -1.0 : 1.0;
    acc = acc + e.dq * (sign * e.weight);
  }
  return dq_to_se3(dq_normalize(acc));
}

inline SE3Pose dqb_blend(const std::vector<BlendEntry>& entries) {
  return dqb_blend(std::span<const BlendEntry>(entries));
}

}  // namespace splatnodes
