#include "blursplat/blur.hpp"

#include <ceres/jet.h>

#include <exception>
#include <stdexcept>
#include <string>

namespace blursplat {

void ExposureSpec::validate() const {
  if (subframes < 1) throw std::invalid_argument("exposure: subframe count must be >= 1");
  if (!(duration > 0.0) || duration > 1.0) throw std::invalid_argument("exposure: duration must be in (0, 1]");
  if (reference < 1 || reference > subframes) {
    throw std::invalid_argument("exposure: reference subframe " + std::to_string(reference) + " outside [1, " +
                                std::to_string(subframes) + "]");
  }
}

std::vector<Pose> subframe_poses(const Pose& initial, const Twist& start_twist, const Twist& end_twist,
                                 const ExposureSpec& spec) {
  spec.validate();
  return subframe_poses_t(initial, start_twist, end_twist, spec.subframes);
}

std::vector<Pose> subframe_poses(const SceneModel& scene, int t, const ExposureSpec& spec) {
  const CameraTrack& c = scene.at(t).camera;
  return subframe_poses(c.initial, c.start, c.end, spec);
}

namespace {

constexpr int kCameraInputs = 12;
constexpr int kObjectInputs = 13;
using CameraJet = ceres::Jet<double, kCameraInputs>;
using ObjectJet = ceres::Jet<double, kObjectInputs>;
using Jacobian7x12 = Eigen::Matrix<double, 7, kCameraInputs>;
using Jacobian7x13 = Eigen::Matrix<double, 7, kObjectInputs>;

template <typename J, int K, typename Tag>
Eigen::Matrix<double, 7, K> rigid_jacobian(const RigidT<J, Tag>& r) {
  Eigen::Matrix<double, 7, K> out;
  out.row(0) = r.rotation.w().v.transpose();
  out.row(1) = r.rotation.x().v.transpose();
  out.row(2) = r.rotation.y().v.transpose();
  out.row(3) = r.rotation.z().v.transpose();
  for (int i = 0; i < 3; ++i) out.row(4 + i) = r.translation[i].v.transpose();
  return out;
}

Eigen::Matrix<double, 7, 1> stack(const RigidGrad& g) {
  Eigen::Matrix<double, 7, 1> v;
  v << g.rotation, g.translation;
  return v;
}

struct CameraChain {
  std::vector<AffineWarp> warps;
  Pose reference;
  std::vector<Jacobian7x12> warp_jacobians;
  Jacobian7x12 reference_jacobian;
};

CameraChain camera_chain(const CameraTrack& track, const ExposureSpec& spec, bool derivatives) {
  CameraChain out;
  const int n = spec.subframes;
  if (!derivatives) {
    const std::vector<Pose> poses = subframe_poses_t(track.initial, track.start, track.end, n);
    out.reference = poses[static_cast<std::size_t>(spec.reference - 1)];
    for (const Pose& p : poses) out.warps.push_back(relative_warp(p, out.reference));
    return out;
  }
  TwistT<CameraJet> s, e;
  for (int i = 0; i < 3; ++i) {
    s.omega[i] = CameraJet(track.start.omega[i], i);
    s.v[i] = CameraJet(track.start.v[i], 3 + i);
    e.omega[i] = CameraJet(track.end.omega[i], 6 + i);
    e.v[i] = CameraJet(track.end.v[i], 9 + i);
  }
  PoseT<CameraJet> initial;
  initial.rotation = QuatT<CameraJet>(CameraJet(track.initial.rotation.w()), CameraJet(track.initial.rotation.x()),
                                      CameraJet(track.initial.rotation.y()), CameraJet(track.initial.rotation.z()));
  for (int i = 0; i < 3; ++i) initial.translation[i] = CameraJet(track.initial.translation[i]);
  const auto poses = subframe_poses_t(initial, s, e, n);
  const PoseT<CameraJet>& ref = poses[static_cast<std::size_t>(spec.reference - 1)];
  out.reference_jacobian = rigid_jacobian<CameraJet, kCameraInputs>(ref);
  for (const auto& p : poses) {
    out.warp_jacobians.push_back(rigid_jacobian<CameraJet, kCameraInputs>(relative_warp(p, ref)));
  }
  return out;
}

std::vector<AffineWarp> object_warps(const TimestampState& ts, const ExposureSpec& spec) {
  std::vector<AffineWarp> out;
  for (int m = 1; m <= spec.subframes; ++m) {
    out.push_back(dynamic_transform(ts.deformation, subframe_weight(ts.exposure_weight, m, spec.subframes)));
  }
  return out;
}

std::vector<Jacobian7x13> object_jacobians(const TimestampState& ts, const ExposureSpec& spec) {
  AffineWarpT<ObjectJet> d;
  d.rotation = QuatT<ObjectJet>(ObjectJet(ts.deformation.rotation.w(), 0), ObjectJet(ts.deformation.rotation.x(), 1),
                                ObjectJet(ts.deformation.rotation.y(), 2), ObjectJet(ts.deformation.rotation.z(), 3));
  for (int i = 0; i < 3; ++i) d.translation[i] = ObjectJet(ts.deformation.translation[i], 4 + i);
  Eigen::Matrix<ObjectJet, 6, 1> w;
  for (int i = 0; i < 6; ++i) w[i] = ObjectJet(ts.exposure_weight[i], 7 + i);
  std::vector<Jacobian7x13> out;
  for (int m = 1; m <= spec.subframes; ++m) {
    out.push_back(rigid_jacobian<ObjectJet, kObjectInputs>(
        dynamic_transform(d, subframe_weight_t(w, m, spec.subframes))));
  }
  return out;
}

std::vector<GaussianPrimitive> warped_set(const SceneModel& scene, const AffineWarp& camera_warp,
                                          const AffineWarp& object_warp) {
  std::vector<GaussianPrimitive> out;
  out.reserve(scene.static_set.size() + scene.dynamic_set.size());
  for (const auto& g : scene.static_set) out.push_back(apply_warp(g, camera_warp));
  for (const auto& g : scene.dynamic_set) out.push_back(apply_warp(apply_warp(g, object_warp), camera_warp));
  return out;
}

void add_camera_grad(TimestampGrad& tg, const Eigen::Matrix<double, kCameraInputs, 1>& g) {
  tg.start_twist += g.head<6>();
  tg.end_twist += g.tail<6>();
}

// Exceptions cannot leave an OpenMP region; re-raise the lowest subframe's.
void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<GaussianPrimitive> subframe_gaussians(const SceneModel& scene, int t, const ExposureSpec& spec, int m) {
  spec.validate();
  if (m < 1 || m > spec.subframes) throw std::out_of_range("subframe index outside [1, N]");
  const TimestampState& ts = scene.at(t);
  const CameraChain chain = camera_chain(ts.camera, spec, false);
  const AffineWarp object = dynamic_transform(ts.deformation, subframe_weight(ts.exposure_weight, m, spec.subframes));
  return warped_set(scene, chain.warps[static_cast<std::size_t>(m - 1)], object);
}

Image synthesize_blur(const SceneModel& scene, const Camera& cam, int t, const ExposureSpec& spec,
                      const RenderSettings& settings, BlurTape* tape) {
  spec.validate();
  cam.validate();
  const TimestampState& ts = scene.at(t);
  const int n = spec.subframes;
  const CameraChain chain = camera_chain(ts.camera, spec, false);
  const std::vector<AffineWarp> objects = object_warps(ts, spec);

  std::vector<Image> frames(static_cast<std::size_t>(n));
  std::vector<RenderTape> tapes(tape ? static_cast<std::size_t>(n) : 0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  RenderSettings inner = settings;
  inner.threads = 1;
#pragma omp parallel for num_threads(std::max(settings.threads, 1)) schedule(static)
  for (int m = 0; m < n; ++m) {
    try {
      const auto gaussians = warped_set(scene, chain.warps[static_cast<std::size_t>(m)], objects[static_cast<std::size_t>(m)]);
      frames[static_cast<std::size_t>(m)] =
          render(gaussians, cam, chain.reference, inner, tape ? &tapes[static_cast<std::size_t>(m)] : nullptr);
    } catch (...) {
      errors[static_cast<std::size_t>(m)] = std::current_exception();
    }
  }
  rethrow_first(errors);

  Image out(cam.width, cam.height);
  for (const Image& f : frames) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += f.data[i];
  }
  for (double& v : out.data) v /= n;

  if (tape) {
    tape->recorded = true;
    tape->timestamp = t;
    tape->threads = std::max(settings.threads, 1);
    tape->spec = spec;
    tape->camera_warps = chain.warps;
    tape->object_warps = objects;
    tape->renders = std::move(tapes);
  }
  return out;
}

void synthesize_blur_backward(const SceneModel& scene, const Camera& cam, const BlurTape& tape, const Image& upstream,
                              SceneGradient& grad) {
  if (!tape.recorded) throw std::logic_error("synthesize_blur_backward: no forward pass was recorded");
  if (upstream.width != cam.width || upstream.height != cam.height) {
    throw std::invalid_argument("synthesize_blur_backward: upstream gradient has the wrong size");
  }
  const TimestampState& ts = scene.at(tape.timestamp);
  const ExposureSpec& spec = tape.spec;
  const int n = spec.subframes;
  const std::size_t n_static = scene.static_set.size();
  const std::size_t n_dynamic = scene.dynamic_set.size();

  Image scaled = upstream;
  for (double& v : scaled.data) v /= n;

  struct Partial {
    std::vector<GaussianGrad> static_grads;
    std::vector<GaussianGrad> dynamic_grads;
    RigidGrad camera_warp, object_warp, pose;
  };
  std::vector<Partial> partials(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));

#pragma omp parallel for num_threads(tape.threads) schedule(static)
  for (int m = 0; m < n; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    try {
      Partial& p = partials[mi];
      const RenderGradients rg = render_backward(tape.renders[mi], scaled);
      const AffineWarp& cw = tape.camera_warps[mi];
      const AffineWarp& ow = tape.object_warps[mi];
      p.static_grads.resize(n_static);
      p.dynamic_grads.resize(n_dynamic);
      for (std::size_t i = 0; i < n_static; ++i) {
        p.static_grads[i] = apply_warp_backward(scene.static_set[i], cw, rg.gaussians[i], p.camera_warp);
      }
      for (std::size_t j = 0; j < n_dynamic; ++j) {
        const GaussianPrimitive deformed = apply_warp(scene.dynamic_set[j], ow);
        const GaussianGrad gd = apply_warp_backward(deformed, cw, rg.gaussians[n_static + j], p.camera_warp);
        p.dynamic_grads[j] = apply_warp_backward(scene.dynamic_set[j], ow, gd, p.object_warp);
      }
      p.pose = rg.pose;
    } catch (...) {
      errors[mi] = std::current_exception();
    }
  }
  rethrow_first(errors);

  const CameraChain chain = camera_chain(ts.camera, spec, true);
  const std::vector<Jacobian7x13> object_jac = object_jacobians(ts, spec);
  Eigen::Matrix<double, kCameraInputs, 1> g_cam = Eigen::Matrix<double, kCameraInputs, 1>::Zero();
  Eigen::Matrix<double, kObjectInputs, 1> g_obj = Eigen::Matrix<double, kObjectInputs, 1>::Zero();
  for (int m = 0; m < n; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    const Partial& p = partials[mi];
    for (std::size_t i = 0; i < n_static; ++i) grad.static_set[i] += p.static_grads[i];
    for (std::size_t j = 0; j < n_dynamic; ++j) grad.dynamic_set[j] += p.dynamic_grads[j];
    g_cam += chain.warp_jacobians[mi].transpose() * stack(p.camera_warp);
    g_cam += chain.reference_jacobian.transpose() * stack(p.pose);
    g_obj += object_jac[mi].transpose() * stack(p.object_warp);
  }
  TimestampGrad& tg = grad.timestamps[static_cast<std::size_t>(tape.timestamp)];
  add_camera_grad(tg, g_cam);
  tg.deformation.rotation += g_obj.head<4>();
  tg.deformation.translation += g_obj.segment<3>(4);
  tg.exposure_weight += g_obj.tail<6>();
}

SubframeChoice parse_subframe_choice(std::string_view name) {
  if (name == "start") return SubframeChoice::start;
  if (name == "middle") return SubframeChoice::middle;
  if (name == "end") return SubframeChoice::end;
  throw std::invalid_argument("unknown subframe choice '" + std::string(name) + "' (expected start|middle|end)");
}

std::string_view to_string(SubframeChoice choice) {
  switch (choice) {
    case SubframeChoice::start: return "start";
    case SubframeChoice::middle: return "middle";
    case SubframeChoice::end: return "end";
  }
  return "middle";
}

Image render_sharp(const SceneModel& scene, const Camera& cam, int t, SubframeChoice choice, const ExposureSpec& spec,
                   const RenderSettings& settings) {
  spec.validate();
  const int m = choice == SubframeChoice::start ? 1 : choice == SubframeChoice::end ? spec.subframes : (spec.subframes + 1) / 2;
  const CameraChain chain = camera_chain(scene.at(t).camera, spec, false);
  return render(subframe_gaussians(scene, t, spec, m), cam, chain.reference, settings);
}

Image render_static(const SceneModel& scene, const Camera& cam, int t, const ExposureSpec& spec,
                    const RenderSettings& settings, StaticTape* tape) {
  spec.validate();
  const CameraChain chain = camera_chain(scene.at(t).camera, spec, false);
  Image img = render(scene.static_set, cam, chain.reference, settings, tape ? &tape->render : nullptr);
  if (tape) {
    tape->recorded = true;
    tape->timestamp = t;
    tape->spec = spec;
  }
  return img;
}

void render_static_backward(const SceneModel& scene, const StaticTape& tape, const Image& upstream,
                            SceneGradient& grad) {
  if (!tape.recorded) throw std::logic_error("render_static_backward: no forward pass was recorded");
  const RenderGradients rg = render_backward(tape.render, upstream);
  for (std::size_t i = 0; i < scene.static_set.size(); ++i) grad.static_set[i] += rg.gaussians[i];
  const CameraChain chain = camera_chain(scene.at(tape.timestamp).camera, tape.spec, true);
  const Eigen::Matrix<double, kCameraInputs, 1> g = chain.reference_jacobian.transpose() * stack(rg.pose);
  add_camera_grad(grad.timestamps[static_cast<std::size_t>(tape.timestamp)], g);
}

}  // namespace blursplat
