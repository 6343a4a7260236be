#include "blursplat/data_synth.hpp"

#include "blursplat/checkpoint.hpp"
#include "blursplat/image_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace blursplat {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator per purpose so that changing one magnitude does
/// not reshuffle the others.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) { return std::mt19937_64(mix(seed ^ mix(purpose))); }

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.squaredNorm() < 1e-12);
  return v.normalized();
}

Quat random_rotation(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  const Vec3 axis = random_unit(rng);
  return so3_exp<double>(axis * u(rng));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("synthetic spec: " + what); };
  if (frames < 2) fail("frame count must be >= 2");
  if (width < 1 || height < 1) fail("image size must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) fail("fov must be in (0, 180) degrees");
  if (wall_cols < 0 || wall_rows < 0 || clutter_count < 0 || dynamic_count < 0) fail("counts must be >= 0");
  if (wall_cols * wall_rows + clutter_count + dynamic_count == 0) fail("scene has zero Gaussians");
  for (double v : {scene_radius, orbit_radius}) {
    if (!(v > 0.0)) fail("radii must be positive");
  }
  for (double v : {sweep_deg, shake_rot_deg, shake_trans_frac, object_speed, rot_noise_deg, trans_noise_frac, init_noise}) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail("magnitudes must be finite and >= 0");
  }
  if (!(exposure > 0.0 && exposure <= 1.0)) fail("exposure must be in (0, 1]");
  if (gt_subframes < 1) fail("gt_subframes must be >= 1");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"slow-object", "fast-object", "small-shake", "large-shake",
                                                 "dense-static"};
  return names;
}

SyntheticSpec preset(std::string_view name) {
  SyntheticSpec s;
  s.name = std::string(name);
  if (name == "slow-object") {
    s.seed = 101;
    s.object_speed = 0.04;
  } else if (name == "fast-object") {
    s.seed = 202;
    s.object_speed = 0.6;
  } else if (name == "small-shake") {
    s.seed = 303;
    s.shake_rot_deg = 4.0;
    s.shake_trans_frac = 0.005;
  } else if (name == "large-shake") {
    s.seed = 404;
    s.shake_rot_deg = 12.0;
    s.shake_trans_frac = 0.02;
  } else if (name == "dense-static") {
    s.seed = 505;
    s.clutter_count = 60;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  return s;
}

const FrameObservation& Dataset::frame(int t) const {
  for (const auto& f : frames) {
    if (f.t == t) return f;
  }
  throw std::out_of_range("dataset has no observation for timestamp " + std::to_string(t));
}

Camera make_camera(const SyntheticSpec& spec) {
  Camera c;
  c.width = spec.width;
  c.height = spec.height;
  c.fx = 0.5 * spec.width / std::tan(0.5 * spec.fov_deg * kDeg);
  c.fy = c.fx;
  c.cx = 0.5 * spec.width;
  c.cy = 0.5 * spec.height;
  c.near = 0.1;
  return c;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - eye).normalized();
  const Vec3 r = f.cross(up).normalized();
  const Vec3 d = f.cross(r);
  Mat3 rot;
  rot.row(0) = r.transpose();
  rot.row(1) = d.transpose();
  rot.row(2) = f.transpose();
  Pose p;
  p.rotation = normalized_canonical(Quat(rot));
  p.translation = -(p.rotation * eye);
  return p;
}

Pose perturb_pose(const Pose& pose, double rot_sigma_rad, double trans_sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> angle(0.0, 1.0);
  const Vec3 axis = random_unit(rng);
  const double a = rot_sigma_rad * angle(rng);
  const Vec3 dir = random_unit(rng);
  const double m = trans_sigma * angle(rng);
  Twist xi;
  xi.omega = axis * a;
  xi.v = dir * m;
  return exp(xi) * pose;
}

namespace {

std::vector<GaussianPrimitive> make_static(const SyntheticSpec& spec) {
  std::mt19937_64 rng = stream(spec.seed, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<GaussianPrimitive> out;
  const double spacing = 0.8;
  for (int j = 0; j < spec.wall_rows; ++j) {
    for (int i = 0; i < spec.wall_cols; ++i) {
      GaussianPrimitive g;
      g.mean = Vec3((i - 0.5 * (spec.wall_cols - 1)) * spacing, (j - 0.5 * (spec.wall_rows - 1)) * spacing, -2.5);
      g.log_scale = Vec3(std::log(0.42 + 0.08 * u(rng)), std::log(0.42 + 0.08 * u(rng)), std::log(0.03));
      g.rotation = so3_exp<double>(Vec3(0, 0, 0.6 * (u(rng) - 0.5)));
      g.opacity_logit = logit(0.95);
      g.color = Vec3(0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng));
      for (int k = 0; k < 9; ++k) g.sh1.data()[k] = 0.03 * n(rng);
      out.push_back(g);
    }
  }
  for (int i = 0; i < spec.clutter_count; ++i) {
    GaussianPrimitive g;
    g.mean = Vec3(-2.2 + 4.4 * u(rng), -1.8 + 3.6 * u(rng), -2.3 + 4.1 * u(rng));
    g.log_scale = Vec3(std::log(0.08 + 0.17 * u(rng)), std::log(0.08 + 0.17 * u(rng)), std::log(0.08 + 0.17 * u(rng)));
    g.rotation = random_rotation(rng, std::numbers::pi);
    g.opacity_logit = logit(0.7 + 0.25 * u(rng));
    g.color = Vec3(0.05 + 0.9 * u(rng), 0.05 + 0.9 * u(rng), 0.05 + 0.9 * u(rng));
    for (int k = 0; k < 9; ++k) g.sh1.data()[k] = 0.05 * n(rng);
    out.push_back(g);
  }
  return out;
}

std::vector<GaussianPrimitive> make_dynamic(const SyntheticSpec& spec) {
  std::mt19937_64 rng = stream(spec.seed, 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<GaussianPrimitive> out;
  const Vec3 centre(0.0, 0.2, 1.2);
  const Vec3 base(0.9, 0.5 * u(rng), 0.1);
  for (int i = 0; i < spec.dynamic_count; ++i) {
    GaussianPrimitive g;
    g.mean = centre + 0.35 * Vec3(2 * u(rng) - 1, 2 * u(rng) - 1, 2 * u(rng) - 1);
    g.log_scale = Vec3(std::log(0.08 + 0.1 * u(rng)), std::log(0.08 + 0.1 * u(rng)), std::log(0.08 + 0.1 * u(rng)));
    g.rotation = random_rotation(rng, std::numbers::pi);
    g.opacity_logit = logit(0.85 + 0.1 * u(rng));
    g.color = (base + 0.3 * Vec3(u(rng), u(rng), u(rng))).cwiseMin(1.0);
    for (int k = 0; k < 9; ++k) g.sh1.data()[k] = 0.03 * n(rng);
    out.push_back(g);
  }
  return out;
}

GaussianPrimitive jitter(const GaussianPrimitive& g, double s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  GaussianPrimitive out = g;
  for (int k = 0; k < 3; ++k) out.mean[k] += 0.03 * s * n(rng);
  for (int k = 0; k < 3; ++k) out.log_scale[k] += 0.1 * s * n(rng);
  out.rotation = normalized_canonical(Quat(so3_exp<double>(Vec3(n(rng), n(rng), n(rng)) * (0.05 * s)) * g.rotation));
  out.opacity_logit += 0.3 * s * n(rng);
  for (int k = 0; k < 3; ++k) out.color[k] = std::clamp(out.color[k] + 0.05 * s * n(rng), 0.0, 1.0);
  return out;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.camera = make_camera(spec);

  SceneModel& gt = d.gt_scene;
  gt.sh_degree = 1;
  gt.static_set = make_static(spec);
  gt.dynamic_set = make_dynamic(spec);

  std::mt19937_64 shake_rng = stream(spec.seed, 3);
  std::mt19937_64 noise_rng = stream(spec.seed, 4);
  std::mt19937_64 init_rng = stream(spec.seed, 5);
  std::uniform_real_distribution<double> u(0.5, 1.5);

  const Vec6 object_twist = (Vec6() << 0.0, spec.object_speed, 0.0, 0.0, 0.0, 0.0).finished();
  const double mid_t = 0.5 * (spec.frames - 1);
  const double elevation = 8.0 * kDeg;
  for (int t = 0; t < spec.frames; ++t) {
    TimestampState ts;
    ts.deformation = exp(Twist::from_vector(object_twist * (t - mid_t))).as<WarpTag>();
    // Weight +w/2 at the first subframe reaches back half an exposure.
    ts.exposure_weight = -spec.exposure * object_twist;
    const double azimuth = spec.sweep_deg * kDeg * (t / static_cast<double>(spec.frames - 1) - 0.5);
    const Vec3 eye = spec.orbit_radius *
                     Vec3(std::sin(azimuth) * std::cos(elevation), std::sin(elevation), std::cos(azimuth) * std::cos(elevation));
    ts.camera.initial = look_at(eye, Vec3::Zero());
    Twist eta;
    eta.omega = random_unit(shake_rng) * (spec.shake_rot_deg * kDeg * u(shake_rng));
    eta.v = random_unit(shake_rng) * (spec.shake_trans_frac * spec.scene_radius * u(shake_rng));
    ts.camera.start = Twist{-0.5 * eta.omega, -0.5 * eta.v};
    ts.camera.end = Twist{0.5 * eta.omega, 0.5 * eta.v};
    gt.timestamps.push_back(ts);
  }

  RenderSettings settings;
  settings.background = spec.background;
  const ExposureSpec blur_spec = ExposureSpec::with_subframes(spec.gt_subframes, spec.exposure);
  const ExposureSpec sharp_spec = ExposureSpec::with_subframes(1, spec.exposure);

  SceneModel& init = d.init_scene;
  init.sh_degree = gt.sh_degree;
  for (const auto& g : gt.static_set) init.static_set.push_back(jitter(g, spec.init_noise, init_rng));
  for (const auto& g : gt.dynamic_set) init.dynamic_set.push_back(jitter(g, spec.init_noise, init_rng));

  for (int t = 0; t < spec.frames; ++t) {
    const TimestampState& ts = gt.timestamps[static_cast<std::size_t>(t)];
    FrameObservation f;
    f.t = t;
    f.exposure = spec.exposure;
    f.gt_pose = subframe_poses(gt, t, sharp_spec).front();
    f.blurry = synthesize_blur(gt, d.camera, t, blur_spec, settings);
    f.sharp = render_sharp(gt, d.camera, t, SubframeChoice::middle, sharp_spec, settings);
    f.static_target = render_static(gt, d.camera, t, sharp_spec, settings);
    quantize_to_float(f.blurry);
    quantize_to_float(f.sharp);
    quantize_to_float(f.static_target);
    f.init_pose = perturb_pose(f.gt_pose, spec.rot_noise_deg * kDeg, spec.trans_noise_frac * spec.scene_radius, noise_rng);
    d.frames.push_back(std::move(f));

    TimestampState it;
    {
      std::normal_distribution<double> n(0.0, 1.0);
      Twist dx;
      dx.omega = Vec3(n(init_rng), n(init_rng), n(init_rng)) * (0.5 * kDeg * spec.init_noise);
      dx.v = Vec3(n(init_rng), n(init_rng), n(init_rng)) * (0.01 * spec.init_noise);
      it.deformation = exp(dx).as<WarpTag>() * ts.deformation;
    }
    it.camera.initial = d.frames.back().init_pose;
    init.timestamps.push_back(it);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {
using nlohmann::json;

json spec_json(const SyntheticSpec& s) {
  return json{{"name", s.name},
              {"seed", s.seed},
              {"frames", s.frames},
              {"width", s.width},
              {"height", s.height},
              {"fov_deg", s.fov_deg},
              {"scene_radius", s.scene_radius},
              {"orbit_radius", s.orbit_radius},
              {"sweep_deg", s.sweep_deg},
              {"wall_cols", s.wall_cols},
              {"wall_rows", s.wall_rows},
              {"clutter_count", s.clutter_count},
              {"dynamic_count", s.dynamic_count},
              {"shake_rot_deg", s.shake_rot_deg},
              {"shake_trans_frac", s.shake_trans_frac},
              {"object_speed", s.object_speed},
              {"exposure", s.exposure},
              {"rot_noise_deg", s.rot_noise_deg},
              {"trans_noise_frac", s.trans_noise_frac},
              {"init_noise", s.init_noise},
              {"gt_subframes", s.gt_subframes},
              {"background", {s.background.x(), s.background.y(), s.background.z()}}};
}

SyntheticSpec spec_from(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("synthetic spec: expected an object");
  SyntheticSpec s;
  if (j.contains("preset")) s = preset(j["preset"].get<std::string>());
  const json known = spec_json(s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "preset" && !known.contains(it.key())) {
      throw std::invalid_argument("synthetic spec: unknown key '" + it.key() + "'");
    }
  }
  s.name = j.value("name", s.name);
  s.seed = j.value("seed", s.seed);
  s.frames = j.value("frames", s.frames);
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.fov_deg = j.value("fov_deg", s.fov_deg);
  s.scene_radius = j.value("scene_radius", s.scene_radius);
  s.orbit_radius = j.value("orbit_radius", s.orbit_radius);
  s.sweep_deg = j.value("sweep_deg", s.sweep_deg);
  s.wall_cols = j.value("wall_cols", s.wall_cols);
  s.wall_rows = j.value("wall_rows", s.wall_rows);
  s.clutter_count = j.value("clutter_count", s.clutter_count);
  s.dynamic_count = j.value("dynamic_count", s.dynamic_count);
  s.shake_rot_deg = j.value("shake_rot_deg", s.shake_rot_deg);
  s.shake_trans_frac = j.value("shake_trans_frac", s.shake_trans_frac);
  s.object_speed = j.value("object_speed", s.object_speed);
  s.exposure = j.value("exposure", s.exposure);
  s.rot_noise_deg = j.value("rot_noise_deg", s.rot_noise_deg);
  s.trans_noise_frac = j.value("trans_noise_frac", s.trans_noise_frac);
  s.init_noise = j.value("init_noise", s.init_noise);
  s.gt_subframes = j.value("gt_subframes", s.gt_subframes);
  if (j.contains("background")) {
    const auto bg = j["background"].get<std::vector<double>>();
    if (bg.size() != 3) throw std::invalid_argument("synthetic spec: background must have 3 components");
    s.background = Vec3(bg[0], bg[1], bg[2]);
  }
  s.validate();
  return s;
}

std::string frame_stem(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d", t);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pose_lines(const std::vector<Pose>& poses) {
  std::string out;
  char buf[512];
  for (const Pose& p : poses) {
    const auto a = to_array(p);
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", a[0], a[1], a[2], a[3], a[4], a[5],
                  a[6]);
    out += buf;
  }
  return out;
}

std::vector<Pose> read_poses(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Pose> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::array<double, 7> a{};
    for (double& v : a) {
      if (!(ls >> v)) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 7 numbers");
    }
    out.push_back(pose_from_array(a));
  }
  return out;
}

std::string camera_line(const Camera& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %d %d %.17g\n", c.fx, c.fy, c.cx, c.cy, c.width, c.height,
                c.near);
  return buf;
}

}  // namespace

SyntheticSpec spec_from_json_text(const std::string& text) {
  try {
    return spec_from(json::parse(text));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("synthetic spec: ") + e.what());
  }
}

std::string spec_to_json_text(const SyntheticSpec& spec) { return spec_json(spec).dump(2); }

void export_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!dir.parent_path().empty() && !fs::is_directory(dir.parent_path())) {
    throw std::runtime_error(dir.parent_path().string() + ": parent directory does not exist");
  }
  fs::create_directories(dir / "frames");
  json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["spec"] = spec_json(d.spec);
  manifest["camera"] = {{"fx", d.camera.fx},       {"fy", d.camera.fy},         {"cx", d.camera.cx},
                        {"cy", d.camera.cy},       {"width", d.camera.width},   {"height", d.camera.height},
                        {"near", d.camera.near}};
  manifest["poses_gt"] = "poses_gt.txt";
  manifest["poses_init"] = "poses_init.txt";
  manifest["gt_scene"] = "gt_scene.bin";
  manifest["init_scene"] = "init_scene.bin";
  json frames = json::array();
  std::vector<Pose> gt, init;
  for (const auto& f : d.frames) {
    const std::string stem = "frames/" + frame_stem(f.t);
    write_pfm(dir / (stem + "_blurry.pfm"), f.blurry);
    write_pfm(dir / (stem + "_sharp.pfm"), f.sharp);
    write_pfm(dir / (stem + "_static.pfm"), f.static_target);
    frames.push_back({{"t", f.t},
                      {"exposure", f.exposure},
                      {"blurry", stem + "_blurry.pfm"},
                      {"sharp", stem + "_sharp.pfm"},
                      {"static", stem + "_static.pfm"}});
    gt.push_back(f.gt_pose);
    init.push_back(f.init_pose);
  }
  manifest["frames"] = frames;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "camera.txt", camera_line(d.camera));
  write_text(dir / "poses_gt.txt", pose_lines(gt));
  write_text(dir / "poses_init.txt", pose_lines(init));
  write_scene_file(dir / "gt_scene.bin", d.gt_scene);
  write_scene_file(dir / "init_scene.bin", d.init_scene);
}

Dataset import_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw std::runtime_error(manifest_path.string() + ": manifest not found");
  }
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  Dataset d;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw std::runtime_error(manifest_path.string() + ": unsupported format_version " + std::to_string(version));
    }
    d.spec = spec_from(m.at("spec"));
    const json& c = m.at("camera");
    d.camera.fx = c.at("fx").get<double>();
    d.camera.fy = c.at("fy").get<double>();
    d.camera.cx = c.at("cx").get<double>();
    d.camera.cy = c.at("cy").get<double>();
    d.camera.width = c.at("width").get<int>();
    d.camera.height = c.at("height").get<int>();
    d.camera.near = c.at("near").get<double>();
    d.camera.validate();
    const auto gt = read_poses(dir / m.at("poses_gt").get<std::string>());
    const auto init = read_poses(dir / m.at("poses_init").get<std::string>());
    const json& frames = m.at("frames");
    if (gt.size() != frames.size() || init.size() != frames.size()) {
      throw std::runtime_error(manifest_path.string() + ": pose files and frame list differ in length");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const json& fj = frames[i];
      FrameObservation f;
      f.t = fj.at("t").get<int>();
      f.exposure = fj.at("exposure").get<double>();
      f.blurry = read_pfm(dir / fj.at("blurry").get<std::string>());
      f.sharp = read_pfm(dir / fj.at("sharp").get<std::string>());
      f.static_target = read_pfm(dir / fj.at("static").get<std::string>());
      for (const Image* img : {&f.blurry, &f.sharp, &f.static_target}) {
        if (img->width != d.camera.width || img->height != d.camera.height) {
          throw std::runtime_error((dir / fj.at("blurry").get<std::string>()).string() +
                                   ": image size does not match the camera");
        }
      }
      f.gt_pose = gt[i];
      f.init_pose = init[i];
      d.frames.push_back(std::move(f));
    }
    d.gt_scene = read_scene_file(dir / m.at("gt_scene").get<std::string>());
    d.init_scene = read_scene_file(dir / m.at("init_scene").get<std::string>());
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace blursplat
