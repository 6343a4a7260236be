#include "blursplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace blursplat {

Vec3 GaussianPrimitive::scale() const {
  Vec3 s;
  for (int k = 0; k < 3; ++k) s[k] = std::clamp(std::exp(log_scale[k]), kMinScale, kMaxScale);
  return s;
}

double GaussianPrimitive::opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }

Mat3 GaussianPrimitive::covariance() const {
  const Mat3 m = rotation.normalized().toRotationMatrix() * scale().asDiagonal();
  return m * m.transpose();
}

GaussianGrad& GaussianGrad::operator+=(const GaussianGrad& o) {
  mean += o.mean;
  log_scale += o.log_scale;
  rotation += o.rotation;
  opacity_logit += o.opacity_logit;
  color += o.color;
  sh1 += o.sh1;
  return *this;
}

GaussianGrad& GaussianGrad::operator*=(double s) {
  mean *= s;
  log_scale *= s;
  rotation *= s;
  opacity_logit *= s;
  color *= s;
  sh1 *= s;
  return *this;
}

namespace {
void pack_fields(const Vec3& mean, const Vec3& log_scale, const Vec4& rot, double opacity, const Vec3& color,
                 const Mat3& sh1, std::span<double, kGaussianParamCount> out) {
  int k = 0;
  for (int i = 0; i < 3; ++i) out[k++] = mean[i];
  for (int i = 0; i < 3; ++i) out[k++] = log_scale[i];
  for (int i = 0; i < 4; ++i) out[k++] = rot[i];
  out[k++] = opacity;
  for (int i = 0; i < 3; ++i) out[k++] = color[i];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[k++] = sh1(r, c);
}
}  // namespace

void pack(const GaussianPrimitive& g, std::span<double, kGaussianParamCount> out) {
  pack_fields(g.mean, g.log_scale, wxyz(g.rotation), g.opacity_logit, g.color, g.sh1, out);
}

void pack(const GaussianGrad& g, std::span<double, kGaussianParamCount> out) {
  pack_fields(g.mean, g.log_scale, g.rotation, g.opacity_logit, g.color, g.sh1, out);
}

void unpack(std::span<const double, kGaussianParamCount> in, GaussianPrimitive& g) {
  int k = 0;
  for (int i = 0; i < 3; ++i) g.mean[i] = in[k++];
  for (int i = 0; i < 3; ++i) g.log_scale[i] = in[k++];
  Vec4 q;
  for (int i = 0; i < 4; ++i) q[i] = in[k++];
  g.rotation = quat_from_wxyz(q);
  g.opacity_logit = in[k++];
  for (int i = 0; i < 3; ++i) g.color[i] = in[k++];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g.sh1(r, c) = in[k++];
}

const TimestampState& SceneModel::at(int t) const {
  if (t < 0 || t >= timestamp_count()) {
    throw std::out_of_range("scene has no timestamp " + std::to_string(t));
  }
  return timestamps[static_cast<std::size_t>(t)];
}

TimestampState& SceneModel::at(int t) {
  return const_cast<TimestampState&>(static_cast<const SceneModel&>(*this).at(t));
}

SceneGradient SceneGradient::zeros_like(const SceneModel& scene) {
  SceneGradient g;
  g.static_set.resize(scene.static_set.size());
  g.dynamic_set.resize(scene.dynamic_set.size());
  g.timestamps.resize(scene.timestamps.size());
  return g;
}

SceneGradient& SceneGradient::operator+=(const SceneGradient& o) {
  for (std::size_t i = 0; i < static_set.size(); ++i) static_set[i] += o.static_set[i];
  for (std::size_t i = 0; i < dynamic_set.size(); ++i) dynamic_set[i] += o.dynamic_set[i];
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    timestamps[i].deformation += o.timestamps[i].deformation;
    timestamps[i].exposure_weight += o.timestamps[i].exposure_weight;
    timestamps[i].start_twist += o.timestamps[i].start_twist;
    timestamps[i].end_twist += o.timestamps[i].end_twist;
  }
  return *this;
}

std::vector<GaussianPrimitive> deform_dynamic(const SceneModel& scene, int t, const Vec6& weight) {
  const TimestampState& ts = scene.at(t);
  return apply_warp(scene.dynamic_set, dynamic_transform(ts.deformation, weight));
}

const Mat3& sh1_permutation() {
  static const Mat3 p = [] {
    Mat3 m;
    // clang-format off
    m <<  0, -1, 0,
          0,  0, 1,
         -1,  0, 0;
    // clang-format on
    return m;
  }();
  return p;
}

Vec3 sh1_basis(const Vec3& d) { return kShC1 * Vec3(-d.y(), d.z(), -d.x()); }

Vec3 evaluate_color(const GaussianPrimitive& g, const Vec3& d) { return g.color + g.sh1.transpose() * sh1_basis(d); }

GaussianPrimitive apply_warp(const GaussianPrimitive& g, const AffineWarp& warp) {
  const Mat3 r = warp.rotation_matrix();
  GaussianPrimitive out = g;
  out.mean = r * g.mean + warp.translation;
  // Unnormalised product: exact for the identity warp; consumers normalise.
  out.rotation = canonical(Quat(warp.rotation * g.rotation));
  const Mat3& p = sh1_permutation();
  out.sh1 = (p * r * p.transpose()) * g.sh1;
  return out;
}

std::vector<GaussianPrimitive> apply_warp(std::span<const GaussianPrimitive> gaussians, const AffineWarp& warp) {
  std::vector<GaussianPrimitive> out;
  out.reserve(gaussians.size());
  for (const auto& g : gaussians) out.push_back(apply_warp(g, warp));
  return out;
}

GaussianGrad apply_warp_backward(const GaussianPrimitive& g, const AffineWarp& warp, const GaussianGrad& gw,
                                 RigidGrad& warp_grad) {
  const Mat3 r = warp.rotation_matrix();
  const Mat3& p = sh1_permutation();
  GaussianGrad out = gw;

  // mean' = R mean + t
  out.mean = r.transpose() * gw.mean;
  Mat3 g_r = gw.mean * g.mean.transpose();
  warp_grad.translation += gw.mean;

  // sh1' = P R P^T sh1
  out.sh1 = p * r.transpose() * p.transpose() * gw.sh1;
  g_r += p.transpose() * gw.sh1 * g.sh1.transpose() * p;

  // q' = sign * (q_w (x) q)
  const Quat raw = warp.rotation * g.rotation;
  const double sign = raw.w() < 0.0 ? -1.0 : 1.0;
  out.rotation = sign * quat_left_matrix(warp.rotation).transpose() * gw.rotation;
  warp_grad.rotation += sign * quat_right_matrix(g.rotation).transpose() * gw.rotation;
  warp_grad.rotation += rotation_matrix_grad_to_quat(warp.rotation, g_r);
  return out;
}

}  // namespace blursplat
