#include "blursplat/se3.hpp"

namespace blursplat {

Vec4 rotation_matrix_grad_to_quat(const Quat& q, const Mat3& G) {
  const Quat u = q.normalized();
  const double w = u.w(), x = u.x(), y = u.y(), z = u.z();
  Vec4 g;
  g[0] = 2.0 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
  g[1] = 2.0 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2.0 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) +
                w * G(2, 1) - 2.0 * x * G(2, 2));
  g[2] = 2.0 * (-2.0 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) +
                z * G(2, 1) - 2.0 * y * G(2, 2));
  g[3] = 2.0 * (-2.0 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2.0 * z * G(1, 1) +
                y * G(1, 2) + x * G(2, 0) + y * G(2, 1));
  return project_quat_grad(q, g);
}

Vec4 project_quat_grad(const Quat& q, const Vec4& g) {
  const double n = q.coeffs().norm();
  const Vec4 qhat = wxyz(q) / n;
  return (g - qhat * qhat.dot(g)) / n;
}

Eigen::Matrix4d quat_left_matrix(const Quat& a) {
  Eigen::Matrix4d m;
  // clang-format off
  m << a.w(), -a.x(), -a.y(), -a.z(),
       a.x(),  a.w(), -a.z(),  a.y(),
       a.y(),  a.z(),  a.w(), -a.x(),
       a.z(), -a.y(),  a.x(),  a.w();
  // clang-format on
  return m;
}

Eigen::Matrix4d quat_right_matrix(const Quat& b) {
  Eigen::Matrix4d m;
  // clang-format off
  m << b.w(), -b.x(), -b.y(), -b.z(),
       b.x(),  b.w(),  b.z(), -b.y(),
       b.y(), -b.z(),  b.w(),  b.x(),
       b.z(),  b.y(), -b.x(),  b.w();
  // clang-format on
  return m;
}

std::array<double, 7> to_array(const Pose& pose) {
  const Quat q = canonical(pose.rotation);
  return {q.w(), q.x(), q.y(), q.z(), pose.translation.x(), pose.translation.y(), pose.translation.z()};
}

Pose pose_from_array(const std::array<double, 7>& a) {
  Pose p;
  p.rotation = normalized_canonical(Quat(a[0], a[1], a[2], a[3]));
  p.translation = Vec3(a[4], a[5], a[6]);
  return p;
}

}  // namespace blursplat
