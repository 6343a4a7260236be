// Rigid-transform algebra: quaternion rotations, SE(3) exp/log, relative
// warps between camera poses, and geodesic pose interpolation.
//
// Every routine is templated on the scalar so that the same code path is
// evaluated with doubles and with forward-mode dual numbers when the
// optimizer needs derivatives of pose chains.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>

namespace blursplat {

template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;
template <typename T>
using QuatT = Eigen::Quaternion<T>;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Rotations are unit quaternions with w >= 0.
using Rotation = Quat;

/// Below this rotation angle exp() switches to its Taylor series.
inline constexpr double kSmallAngle = 1e-6;

namespace detail {
using std::atan2;
using std::cos;
using std::sin;
using std::sqrt;

template <typename T>
Mat3T<T> skew(const Vec3T<T>& v) {
  Mat3T<T> s;
  // clang-format off
  s << T(0), -v.z(),  v.y(),
       v.z(),  T(0), -v.x(),
      -v.y(),  v.x(),  T(0);
  // clang-format on
  return s;
}
}  // namespace detail

template <typename T>
QuatT<T> canonical(QuatT<T> q) {
  if (q.w() < T(0)) q.coeffs() = -q.coeffs();
  return q;
}

template <typename T>
QuatT<T> normalized_canonical(const QuatT<T>& q) {
  using std::sqrt;
  using detail::sqrt;
  const T n = sqrt(q.coeffs().squaredNorm());
  QuatT<T> out(q.w() / n, q.x() / n, q.y() / n, q.z() / n);
  return canonical(out);
}

/// Element of se(3): rotation part omega (axis * angle, radians) and
/// translational part v.
template <typename T>
struct TwistT {
  Vec3T<T> omega = Vec3T<T>::Zero();
  Vec3T<T> v = Vec3T<T>::Zero();

  static TwistT zero() { return {}; }
  static TwistT from_vector(const Eigen::Matrix<T, 6, 1>& x) {
    return {x.template head<3>(), x.template tail<3>()};
  }
  Eigen::Matrix<T, 6, 1> vector() const {
    Eigen::Matrix<T, 6, 1> x;
    x << omega, v;
    return x;
  }
};

struct PoseTag {};
struct WarpTag {};

/// Rigid transform x -> R x + t. Instantiated as Pose (world-to-camera
/// extrinsic) and AffineWarp (transform applied to primitives); the tag keeps
/// the two from being mixed up by accident.
template <typename T, typename Tag>
struct RigidT {
  QuatT<T> rotation = QuatT<T>(T(1), T(0), T(0), T(0));
  Vec3T<T> translation = Vec3T<T>::Zero();

  static RigidT identity() { return {}; }

  Mat3T<T> rotation_matrix() const { return rotation.toRotationMatrix(); }

  Vec3T<T> apply(const Vec3T<T>& x) const { return rotation * x + translation; }

  RigidT inverse() const {
    RigidT out;
    out.rotation = rotation.conjugate();
    out.translation = -(out.rotation * translation);
    return out;
  }

  /// (*this) o other: apply `other` first.
  RigidT operator*(const RigidT& other) const {
    RigidT out;
    out.rotation = normalized_canonical(QuatT<T>(rotation * other.rotation));
    out.translation = rotation * other.translation + translation;
    return out;
  }

  template <typename OtherTag>
  RigidT<T, OtherTag> as() const {
    return {rotation, translation};
  }
};

template <typename T>
using PoseT = RigidT<T, PoseTag>;
template <typename T>
using AffineWarpT = RigidT<T, WarpTag>;

using Twist = TwistT<double>;
using Pose = PoseT<double>;
using AffineWarp = AffineWarpT<double>;

/// compose(a, b) = a o b.
template <typename T, typename Tag>
RigidT<T, Tag> compose(const RigidT<T, Tag>& a, const RigidT<T, Tag>& b) {
  return a * b;
}

template <typename T>
QuatT<T> so3_exp(const Vec3T<T>& omega) {
  using detail::cos;
  using detail::sin;
  using detail::sqrt;
  const T theta_sq = omega.squaredNorm();
  T c;
  T k;  // sin(theta/2) / theta
  if (theta_sq < T(kSmallAngle * kSmallAngle)) {
    c = T(1) - theta_sq / T(8);
    k = T(0.5) - theta_sq / T(48);
  } else {
    const T theta = sqrt(theta_sq);
    c = cos(theta / T(2));
    k = sin(theta / T(2)) / theta;
  }
  return canonical(QuatT<T>(c, k * omega.x(), k * omega.y(), k * omega.z()));
}

template <typename T>
Vec3T<T> so3_log(const QuatT<T>& q_in) {
  using detail::atan2;
  using detail::sqrt;
  const QuatT<T> q = canonical(q_in);
  const Vec3T<T> v = q.vec();
  const T n_sq = v.squaredNorm();
  if (n_sq < T(1e-16)) {
    // theta / |v| = 2 atan(x) / (x w) with x = |v| / w.
    const T x_sq = n_sq / (q.w() * q.w());
    return (T(2) / q.w()) * (T(1) - x_sq / T(3) + x_sq * x_sq / T(5)) * v;
  }
  const T n = sqrt(n_sq);
  return (T(2) * atan2(n, q.w()) / n) * v;
}

/// Left Jacobian of SO(3) (the V matrix of the SE(3) exponential).
template <typename T>
Mat3T<T> so3_left_jacobian(const Vec3T<T>& omega) {
  using detail::cos;
  using detail::sin;
  using detail::sqrt;
  const T theta_sq = omega.squaredNorm();
  T a, b;
  if (theta_sq < T(1e-8)) {
    a = T(0.5) - theta_sq / T(24) + theta_sq * theta_sq / T(720);
    b = T(1) / T(6) - theta_sq / T(120) + theta_sq * theta_sq / T(5040);
  } else {
    const T theta = sqrt(theta_sq);
    a = (T(1) - cos(theta)) / theta_sq;
    b = (theta - sin(theta)) / (theta_sq * theta);
  }
  const Mat3T<T> K = detail::skew(omega);
  return Mat3T<T>::Identity() + a * K + b * K * K;
}

template <typename T>
Mat3T<T> so3_left_jacobian_inverse(const Vec3T<T>& omega) {
  using detail::cos;
  using detail::sin;
  using detail::sqrt;
  const T theta_sq = omega.squaredNorm();
  T c;
  if (theta_sq < T(1e-4)) {
    c = T(1) / T(12) + theta_sq / T(720) + theta_sq * theta_sq / T(30240);
  } else {
    const T theta = sqrt(theta_sq);
    const T half = theta / T(2);
    c = (T(1) - half * cos(half) / sin(half)) / theta_sq;
  }
  const Mat3T<T> K = detail::skew(omega);
  return Mat3T<T>::Identity() - T(0.5) * K + c * K * K;
}

template <typename T>
PoseT<T> exp(const TwistT<T>& xi) {
  PoseT<T> out;
  out.rotation = so3_exp(xi.omega);
  out.translation = so3_left_jacobian(xi.omega) * xi.v;
  return out;
}

template <typename T, typename Tag>
TwistT<T> log(const RigidT<T, Tag>& pose) {
  TwistT<T> xi;
  xi.omega = so3_log(pose.rotation);
  xi.v = so3_left_jacobian_inverse(xi.omega) * pose.translation;
  return xi;
}

/// Warp T such that rendering T(G) from `reference` equals rendering G from
/// `other`:  T = reference^-1 o other.
template <typename T>
AffineWarpT<T> relative_warp(const PoseT<T>& other, const PoseT<T>& reference) {
  return (reference.inverse() * other).template as<WarpTag>();
}

/// Geodesic interpolation exp(s log(end o start^-1)) o start.
/// Throws std::domain_error when the relative rotation is a half turn.
template <typename T>
PoseT<T> interpolate_pose(const PoseT<T>& start, const PoseT<T>& end, T s) {
  if (s < T(0) || s > T(1)) throw std::invalid_argument("interpolate_pose: s outside [0, 1]");
  const PoseT<T> rel = end * start.inverse();
  if (rel.rotation.w() < T(1e-12)) {
    throw std::domain_error("interpolate_pose: relative rotation of pi is ambiguous");
  }
  TwistT<T> xi = log(rel);
  xi.omega *= s;
  xi.v *= s;
  return exp(xi) * start;
}

/// Geodesic angle of a rotation, in radians.
inline double rotation_angle(const Rotation& q) {
  const Quat c = canonical(q);
  return 2.0 * std::atan2(c.vec().norm(), c.w());
}

// ---------------------------------------------------------------------------
// Quaternion calculus used by the backward passes. Quaternion gradients are
// with respect to raw (w, x, y, z) storage where the forward pass normalizes,
// so they are tangent to the unit sphere at q.

/// Pulls dL/dR (R = rotation matrix of q/|q|) back to dL/dq.
Vec4 rotation_matrix_grad_to_quat(const Quat& q, const Mat3& dL_dR);

/// Pulls dL/dq back through q -> q / |q|.
Vec4 project_quat_grad(const Quat& q, const Vec4& dL_dqhat);

/// Matrices with (a * b).wxyz = left(a) * b.wxyz = right(b) * a.wxyz.
Eigen::Matrix4d quat_left_matrix(const Quat& a);
Eigen::Matrix4d quat_right_matrix(const Quat& b);

inline Vec4 wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat quat_from_wxyz(const Vec4& v) { return Quat(v[0], v[1], v[2], v[3]); }

/// Seven-number form (qw, qx, qy, qz, tx, ty, tz).
std::array<double, 7> to_array(const Pose& pose);
Pose pose_from_array(const std::array<double, 7>& a);

}  // namespace blursplat
