// Synthetic ground truth: a back wall and clutter (static), one rigid
// cluster circling the origin (dynamic), a sweeping camera with per-frame
// shake, high-N blurry observations and noisy initial poses.
#pragma once

#include "blursplat/blur.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace blursplat {

struct FrameObservation {
  int t = 0;
  Image blurry;
  Image sharp;          // mid-exposure render of the ground truth
  Image static_target;  // static Gaussians only, mid-exposure pose
  Pose gt_pose;         // mid-exposure pose
  Pose init_pose;       // perturbed
  double exposure = 1.0;
};

struct SyntheticSpec {
  std::string name = "custom";
  std::uint64_t seed = 1;
  int frames = 24;
  int width = 64;
  int height = 64;
  double fov_deg = 70.0;
  double scene_radius = 3.0;
  double orbit_radius = 5.0;
  double sweep_deg = 30.0;  // total camera azimuth sweep over the sequence
  int wall_cols = 10;
  int wall_rows = 9;
  int clutter_count = 20;
  int dynamic_count = 12;
  double shake_rot_deg = 8.0;      // intra-exposure rotation, about 6 px at the default FOV
  double shake_trans_frac = 0.01;  // intra-exposure translation, fraction of scene radius
  double object_speed = 0.1;      // object angular speed about the vertical axis, rad per frame
  double exposure = 0.75;
  double rot_noise_deg = 1.0;
  double trans_noise_frac = 0.01;
  double init_noise = 1.0;  // scale of the perturbation applied to the initial scene
  int gt_subframes = 64;
  Vec3 background = Vec3::Zero();

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Known presets: slow-object, fast-object, small-shake, large-shake,
/// dense-static. Throws std::invalid_argument for other names.
SyntheticSpec preset(std::string_view name);
const std::vector<std::string>& preset_names();

struct Dataset {
  SyntheticSpec spec;
  Camera camera;
  std::vector<FrameObservation> frames;
  SceneModel gt_scene;    // ground-truth scene, mid-exposure camera tracks
  SceneModel init_scene;  // perturbed scene with noisy initial poses

  /// Throws std::out_of_range when no frame carries timestamp t.
  const FrameObservation& frame(int t) const;
};

Camera make_camera(const SyntheticSpec& spec);

/// world-to-camera pose at `eye` looking at `target` (x right, y down).
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());

/// Deterministic in spec.seed.
Dataset generate(const SyntheticSpec& spec);

/// Pose noise: exp(xi) o pose with a uniformly random rotation axis,
/// angle ~ N(0, rot_sigma_rad), random translation direction and magnitude
/// ~ N(0, trans_sigma).
Pose perturb_pose(const Pose& pose, double rot_sigma_rad, double trans_sigma, std::mt19937_64& rng);

inline constexpr int kDatasetFormatVersion = 1;

/// Writes manifest.json, camera.txt, poses_gt.txt, poses_init.txt,
/// gt_scene.bin, init_scene.bin and frames/NNNN_{blurry,sharp,static}.pfm.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Throws std::runtime_error naming the offending path.
Dataset import_dataset(const std::filesystem::path& dir);

SyntheticSpec spec_from_json_text(const std::string& text);
std::string spec_to_json_text(const SyntheticSpec& spec);

}  // namespace blursplat
