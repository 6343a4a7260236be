// Gaussian scene representation: static set, canonical dynamic set with
// per-timestamp rigid deformation, intra-exposure deformation weights and the
// per-frame camera track (initial pose plus two learnable twists).
#pragma once

#include "blursplat/se3.hpp"

#include <span>
#include <vector>

namespace blursplat {

/// Real SH normalisation constant for degree 1.
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kMinScale = 1e-6;
inline constexpr double kMaxScale = 1e3;

/// One anisotropic 3D Gaussian.
///
/// Colour is `color + sh1^T * Y1(d)` where Y1(d) = C1 * (-d.y, d.z, -d.x) are
/// the three real degree-1 harmonics; `sh1` rows index the harmonic and
/// columns index the RGB channel.
struct GaussianPrimitive {
  Vec3 mean = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Rotation rotation = Rotation::Identity();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
  Mat3 sh1 = Mat3::Zero();

  Vec3 scale() const;
  double opacity() const;
  Mat3 covariance() const;
};

inline constexpr int kGaussianParamCount = 23;

/// Gradient with the same layout as GaussianPrimitive. `rotation` is with
/// respect to the raw (w, x, y, z) quaternion.
struct GaussianGrad {
  Vec3 mean = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
  Mat3 sh1 = Mat3::Zero();

  GaussianGrad& operator+=(const GaussianGrad& o);
  GaussianGrad& operator*=(double s);
};

/// Gradient of a rigid transform with respect to its raw quaternion and
/// translation.
struct RigidGrad {
  Vec4 rotation = Vec4::Zero();
  Vec3 translation = Vec3::Zero();

  RigidGrad& operator+=(const RigidGrad& o) {
    rotation += o.rotation;
    translation += o.translation;
    return *this;
  }
};

void pack(const GaussianPrimitive& g, std::span<double, kGaussianParamCount> out);
void pack(const GaussianGrad& g, std::span<double, kGaussianParamCount> out);
void unpack(std::span<const double, kGaussianParamCount> in, GaussianPrimitive& g);

struct CameraTrack {
  Pose initial;
  Twist start;  // start-of-exposure delta: exp(start) o initial
  Twist end;    // end-of-exposure delta:   exp(end) o initial
};

struct TimestampState {
  AffineWarp deformation;  // (A_t, E_t)
  Vec6 exposure_weight = Vec6::Zero();
  CameraTrack camera;
};

struct SceneModel {
  std::vector<GaussianPrimitive> static_set;
  std::vector<GaussianPrimitive> dynamic_set;  // canonical frame
  std::vector<TimestampState> timestamps;      // indexed by frame timestamp
  int sh_degree = 0;

  /// Throws std::out_of_range for an unregistered timestamp.
  const TimestampState& at(int t) const;
  TimestampState& at(int t);
  int timestamp_count() const { return static_cast<int>(timestamps.size()); }
};

struct TimestampGrad {
  RigidGrad deformation;
  Vec6 exposure_weight = Vec6::Zero();
  Vec6 start_twist = Vec6::Zero();
  Vec6 end_twist = Vec6::Zero();
};

struct SceneGradient {
  std::vector<GaussianGrad> static_set;
  std::vector<GaussianGrad> dynamic_set;
  std::vector<TimestampGrad> timestamps;

  static SceneGradient zeros_like(const SceneModel& scene);
  SceneGradient& operator+=(const SceneGradient& o);
};

/// Linear interpolation of the exposure weight from +w/2 at i = 1 to -w/2 at
/// i = n (1-based). Returns zero when n == 1.
template <typename T>
Eigen::Matrix<T, 6, 1> subframe_weight_t(const Eigen::Matrix<T, 6, 1>& w, int i, int n) {
  if (n < 1 || i < 1 || i > n) throw std::out_of_range("subframe_weight: index outside [1, n]");
  if (n == 1) return Eigen::Matrix<T, 6, 1>::Zero();
  const double f = static_cast<double>(i - 1) / static_cast<double>(n - 1);
  return T(1.0 - f) * (w / T(2)) + T(f) * (-w / T(2));
}

inline Vec6 subframe_weight(const Vec6& w, int i, int n) { return subframe_weight_t<double>(w, i, n); }

/// exp(weight) o (A_t, E_t): the rigid motion applied to canonical dynamic
/// Gaussians for one subframe.
template <typename T>
AffineWarpT<T> dynamic_transform(const AffineWarpT<T>& deformation, const Eigen::Matrix<T, 6, 1>& weight) {
  const AffineWarpT<T> intra = exp(TwistT<T>::from_vector(weight)).template as<WarpTag>();
  return intra * deformation;
}

std::vector<GaussianPrimitive> deform_dynamic(const SceneModel& scene, int t, const Vec6& subframe_weight);

GaussianPrimitive apply_warp(const GaussianPrimitive& g, const AffineWarp& warp);
std::vector<GaussianPrimitive> apply_warp(std::span<const GaussianPrimitive> gaussians, const AffineWarp& warp);

/// Pulls the gradient of a warped primitive back to the original primitive,
/// accumulating the warp's own gradient into `warp_grad`.
GaussianGrad apply_warp_backward(const GaussianPrimitive& original, const AffineWarp& warp,
                                 const GaussianGrad& grad_warped, RigidGrad& warp_grad);

/// Base colour plus degree-1 SH for a unit view direction; not clamped.
Vec3 evaluate_color(const GaussianPrimitive& g, const Vec3& view_direction);

/// Y1(d) as a 3-vector (C1 * (-y, z, -x)).
Vec3 sh1_basis(const Vec3& d);

/// The matrix P with Y1(d) = C1 * P d; degree-1 coefficients rotate as
/// sh1' = P R P^T sh1.
const Mat3& sh1_permutation();

}  // namespace blursplat
