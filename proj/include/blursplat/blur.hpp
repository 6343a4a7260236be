// Exposure blur: N latent sharp subframes along a camera trajectory (two
// learnable twists about the initial pose) and an intra-exposure object
// motion, rendered as rigid warps against the reference subframe and
// averaged.
#pragma once

#include "blursplat/render.hpp"

#include <string_view>
#include <vector>

namespace blursplat {

struct ExposureSpec {
  int subframes = 7;        // N
  double duration = 1.0;    // exposure fraction of the inter-frame interval
  int reference = 4;        // 1-based reference subframe n

  /// Spec with the middle subframe ceil(N/2) as reference.
  static ExposureSpec with_subframes(int n, double duration = 1.0) { return {n, duration, (n + 1) / 2}; }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// Interpolation fraction of subframe m (1-based); 0.5 when N = 1.
inline double subframe_fraction(int m, int n) {
  return n == 1 ? 0.5 : static_cast<double>(m - 1) / static_cast<double>(n - 1);
}

template <typename T>
std::vector<PoseT<T>> subframe_poses_t(const PoseT<T>& initial, const TwistT<T>& start_twist,
                                       const TwistT<T>& end_twist, int n) {
  const PoseT<T> start = exp(start_twist) * initial;
  const PoseT<T> end = exp(end_twist) * initial;
  std::vector<PoseT<T>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int m = 1; m <= n; ++m) out.push_back(interpolate_pose(start, end, T(subframe_fraction(m, n))));
  return out;
}

std::vector<Pose> subframe_poses(const Pose& initial, const Twist& start_twist, const Twist& end_twist,
                                 const ExposureSpec& spec);

/// Subframe poses of timestamp t.
std::vector<Pose> subframe_poses(const SceneModel& scene, int t, const ExposureSpec& spec);

/// Per-subframe forward state kept for the backward pass.
struct BlurTape {
  bool recorded = false;
  int timestamp = 0;
  int threads = 1;
  ExposureSpec spec;
  std::vector<AffineWarp> camera_warps;   // relative_warp(P_m, P_n)
  std::vector<AffineWarp> object_warps;   // exp(w_{t,m}) o (A_t, E_t)
  std::vector<RenderTape> renders;
};

/// Gaussians seen by subframe m (1-based), expressed for rendering from the
/// reference pose: static set first, then the deformed dynamic set.
std::vector<GaussianPrimitive> subframe_gaussians(const SceneModel& scene, int t, const ExposureSpec& spec, int m);

/// Mean of the N subframe renders from the reference pose.
Image synthesize_blur(const SceneModel& scene, const Camera& cam, int t, const ExposureSpec& spec,
                      const RenderSettings& settings = {}, BlurTape* tape = nullptr);

/// Accumulates d(sum(upstream * blur))/d(parameters) into `grad`: static and
/// dynamic Gaussians, deformation, exposure weight and both camera twists of
/// timestamp t. Throws std::logic_error without a recorded forward pass.
void synthesize_blur_backward(const SceneModel& scene, const Camera& cam, const BlurTape& tape,
                              const Image& upstream, SceneGradient& grad);

enum class SubframeChoice { start, middle, end };

SubframeChoice parse_subframe_choice(std::string_view name);
std::string_view to_string(SubframeChoice choice);

/// One subframe of the blur model (start = 1, middle = ceil(N/2), end = N).
Image render_sharp(const SceneModel& scene, const Camera& cam, int t, SubframeChoice choice,
                   const ExposureSpec& spec, const RenderSettings& settings = {});

/// Static set alone rendered from the reference pose of timestamp t.
struct StaticTape {
  bool recorded = false;
  int timestamp = 0;
  ExposureSpec spec;
  RenderTape render;
};

Image render_static(const SceneModel& scene, const Camera& cam, int t, const ExposureSpec& spec,
                    const RenderSettings& settings = {}, StaticTape* tape = nullptr);

/// Accumulates gradients into the static set and the camera twists only.
void render_static_backward(const SceneModel& scene, const StaticTape& tape, const Image& upstream,
                            SceneGradient& grad);

}  // namespace blursplat
