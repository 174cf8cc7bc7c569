#pragma once

// Axis-angle rotations: Rodrigues' formula, its derivatives, and the inverse (log) map.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace dfr {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

inline Vec3 vee(const Mat3& s) { return {s(2, 1), s(0, 2), s(1, 0)}; }

inline constexpr double kSmallAngle = 1e-8;

inline Mat3 rodrigues(const Vec3& theta) {
  const double phi = theta.norm();
  const Mat3 K = skew(theta);
  if (phi < kSmallAngle) return Mat3::Identity() + K + 0.5 * K * K;
  const Mat3 U = K / phi;
  return Mat3::Identity() + std::sin(phi) * U + (1.0 - std::cos(phi)) * U * U;
}

// dR/dtheta_a for a = 0, 1, 2.
inline std::array<Mat3, 3> rodrigues_derivatives(const Vec3& theta) {
  std::array<Mat3, 3> d;
  const double phi2 = theta.squaredNorm();
  if (std::sqrt(phi2) < kSmallAngle) {
    const Mat3 K = skew(theta);
    for (int a = 0; a < 3; ++a) {
      const Mat3 E = skew(Vec3::Unit(a));
      d[a] = E + 0.5 * (E * K + K * E);
    }
    return d;
  }
  // dR/dtheta_a = (theta_a [theta]x + [theta x (I - R) e_a]x) R / |theta|^2
  const Mat3 R = rodrigues(theta);
  const Mat3 K = skew(theta);
  const Mat3 IminusR = Mat3::Identity() - R;
  for (int a = 0; a < 3; ++a) {
    const Vec3 c = theta.cross(IminusR.col(a));
    d[a] = (theta[a] * K + skew(c)) * R / phi2;
  }
  return d;
}

// Inverse of rodrigues for proper rotations; result has norm in [0, pi].
inline Vec3 rotation_log(const Mat3& R) {
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double angle = std::acos(c);
  const Vec3 w = 0.5 * vee(R - R.transpose());  // sin(angle) * axis
  if (angle < 1e-6) return w;  // sin(x) ~ x
  if (std::numbers::pi - angle > 1e-4) return w * (angle / std::sin(angle));
  // Near pi: axis from the symmetric part, R + R^T = 2 I cos + 2 (1 - cos) k k^T.
  const Mat3 B = (0.5 * (R + R.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  int col = 0;
  B.diagonal().maxCoeff(&col);
  Vec3 axis = B.col(col) / std::sqrt(std::max(B(col, col), 1e-300));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return axis * angle;
}

// Same rotation with |theta| in [0, pi].
inline Vec3 wrap_axis_angle(const Vec3& theta) {
  const double phi = theta.norm();
  if (phi <= std::numbers::pi) return theta;
  const double two_pi = 2.0 * std::numbers::pi;
  const double wrapped = phi - two_pi * std::round(phi / two_pi);
  return theta * (wrapped / phi);
}

}  // namespace dfr
