#include "blursplat/checkpoint.hpp"
#include "blursplat/image_io.hpp"
#include "blursplat/metrics.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace blursplat;
using namespace bs_test;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("blursplat_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_pose(const Pose& a, const Pose& b, double tol) {
  return (wxyz(a.rotation) - wxyz(b.rotation)).norm() <= tol && (a.translation - b.translation).norm() <= tol;
}

}  // namespace

TEST_CASE("presets exist and validate") {
  REQUIRE(preset_names().size() == 5);
  for (const auto& n : preset_names()) {
    const SyntheticSpec s = preset(n);
    CHECK(s.name == n);
    CHECK(s.frames == 24);
    CHECK(s.width == 64);
    CHECK_NOTHROW(s.validate());
  }
  CHECK_THROWS_AS(preset("blurry-cat"), std::invalid_argument);
}

TEST_CASE("spec validation") {
  SyntheticSpec s = tiny_spec();
  s.frames = 1;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = tiny_spec();
  s.wall_cols = s.clutter_count = s.dynamic_count = 0;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
  s = tiny_spec();
  s.rot_noise_deg = -1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("generation is deterministic in the seed") {
  const Dataset a = generate(tiny_spec(4)), b = generate(tiny_spec(4)), c = generate(tiny_spec(5));
  REQUIRE(a.frames.size() == 3);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(bitwise_equal(a.frames[i].blurry, b.frames[i].blurry));
    CHECK(bitwise_equal(a.frames[i].static_target, b.frames[i].static_target));
    CHECK(wxyz(a.frames[i].init_pose.rotation) == wxyz(b.frames[i].init_pose.rotation));
  }
  CHECK_FALSE(bitwise_equal(a.frames[0].blurry, c.frames[0].blurry));
}

TEST_CASE("frames carry consistent images and poses") {
  const Dataset d = generate(tiny_spec());
  CHECK(d.camera == make_camera(d.spec));
  CHECK(d.gt_scene.timestamp_count() == 3);
  CHECK(d.init_scene.timestamp_count() == 3);
  for (const auto& f : d.frames) {
    CHECK(f.blurry.same_shape(f.sharp));
    CHECK(f.static_target.width == 16);
    CHECK(pose_error(f.init_pose, f.gt_pose).rotation_deg > 0.0);
    CHECK(same_pose(d.init_scene.at(f.t).camera.initial, f.init_pose, 0.0));
  }
  CHECK_THROWS_AS(d.frame(9), std::out_of_range);
}

TEST_CASE("static target is the static set alone") {
  const Dataset d = generate(tiny_spec());
  RenderSettings rs;
  rs.background = d.spec.background;
  for (const auto& f : d.frames) {
    Image r = render(d.gt_scene.static_set, d.camera, f.gt_pose, rs);
    quantize_to_float(r);
    CHECK(bitwise_equal(r, f.static_target));

    SceneModel hidden = d.gt_scene;
    for (auto& g : hidden.dynamic_set) g.opacity_logit = -1e9;  // opacity 0
    Image s = render_sharp(hidden, d.camera, f.t, SubframeChoice::middle, ExposureSpec::with_subframes(1), rs);
    quantize_to_float(s);
    CHECK(max_abs_diff(s, f.static_target) == 0.0);
  }
}

TEST_CASE("a motionless world gives blurry = sharp and exact initial poses") {
  SyntheticSpec s = tiny_spec();
  s.shake_rot_deg = s.shake_trans_frac = s.object_speed = 0.0;
  s.rot_noise_deg = s.trans_noise_frac = 0.0;
  const Dataset d = generate(s);
  for (const auto& f : d.frames) {
    CHECK(max_abs_diff(f.blurry, f.sharp) < 1e-6);
    CHECK(same_pose(f.init_pose, f.gt_pose, 1e-15));
  }
}

TEST_CASE("pose noise magnitude") {
  std::mt19937_64 rng(12);
  const Pose base = look_at(Vec3(0, 1, 5), Vec3::Zero());
  double sum = 0.0, tsum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose p = perturb_pose(base, M_PI / 180.0, 0.03, rng);
    sum += pose_error(p, base).rotation_deg;
    tsum += (p.translation - (exp(log(p * base.inverse())) * base).translation).norm();
  }
  const double mean = sum / 1000;
  MESSAGE("mean rotation noise " << mean << " deg");
  CHECK(mean >= 0.7);
  CHECK(mean <= 1.3);
  CHECK(tsum / 1000 < 1e-9);  // perturbation is a left composition
}

TEST_CASE("look_at points the optical axis at the target") {
  const Vec3 eye(1, 2, 5);
  const Pose p = look_at(eye, Vec3::Zero());
  CHECK(p.apply(eye).norm() < 1e-12);
  const Vec3 c = p.apply(Vec3::Zero());
  CHECK(c.head<2>().norm() < 1e-12);
  CHECK(c.z() > 0.0);
}

TEST_CASE("export and import round trip") {
  const Dataset d = generate(tiny_spec());
  const fs::path dir = scratch_dir("roundtrip");
  export_dataset(d, dir);
  const Dataset back = import_dataset(dir);
  CHECK(back.camera == d.camera);
  CHECK(back.spec.seed == d.spec.seed);
  CHECK(back.spec.name == d.spec.name);
  REQUIRE(back.frames.size() == d.frames.size());
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    CHECK(bitwise_equal(back.frames[i].blurry, d.frames[i].blurry));
    CHECK(bitwise_equal(back.frames[i].sharp, d.frames[i].sharp));
    CHECK(bitwise_equal(back.frames[i].static_target, d.frames[i].static_target));
    CHECK(same_pose(back.frames[i].gt_pose, d.frames[i].gt_pose, 1e-12));
    CHECK(same_pose(back.frames[i].init_pose, d.frames[i].init_pose, 1e-12));
  }
  CHECK(back.init_scene.static_set.size() == d.init_scene.static_set.size());
  CHECK(back.gt_scene.dynamic_set[0].mean == d.gt_scene.dynamic_set[0].mean);

  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.at("format_version") == kDatasetFormatVersion);
  CHECK(manifest.at("camera").at("fx") == d.camera.fx);
  CHECK(manifest.at("camera").at("width") == d.camera.width);
  CHECK(manifest.at("frames").size() == 3);

  // same dataset written twice gives the same manifest
  const fs::path again = scratch_dir("roundtrip2");
  export_dataset(generate(tiny_spec()), again);
  CHECK(slurp(dir / "manifest.json") == slurp(again / "manifest.json"));
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("import failures name the offending file") {
  const fs::path empty = scratch_dir("empty");
  fs::create_directories(empty);
  try {
    import_dataset(empty);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("manifest.json") != std::string::npos);
  }

  const Dataset d = generate(tiny_spec());
  const fs::path dir = scratch_dir("broken");
  export_dataset(d, dir);
  auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  m["format_version"] = 99;
  std::ofstream(dir / "manifest.json") << m.dump();
  CHECK_THROWS_AS(import_dataset(dir), std::runtime_error);

  export_dataset(d, dir);
  fs::remove(dir / "frames" / "0001_blurry.pfm");
  try {
    import_dataset(dir);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("0001_blurry.pfm") != std::string::npos);
  }
  fs::remove_all(empty);
  fs::remove_all(dir);
}

TEST_CASE("spec JSON round trip and unknown keys") {
  SyntheticSpec s = preset("large-shake");
  s.seed = 77;
  const SyntheticSpec back = spec_from_json_text(spec_to_json_text(s));
  CHECK(back.seed == 77);
  CHECK(back.shake_rot_deg == s.shake_rot_deg);
  CHECK(spec_from_json_text(R"({"preset":"fast-object"})").object_speed == preset("fast-object").object_speed);
  CHECK_THROWS(spec_from_json_text(R"({"frame":3})"));
}

TEST_CASE("PFM round trip is exact for float values") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Image img(7, 5);
  for (double& v : img.data) v = u(rng);
  quantize_to_float(img);
  const fs::path dir = scratch_dir("pfm");
  fs::create_directories(dir);
  write_pfm(dir / "a.pfm", img);
  CHECK(bitwise_equal(read_pfm(dir / "a.pfm"), img));
  CHECK(slurp(dir / "a.pfm").rfind("PF\n7 5\n-1", 0) == 0);
  CHECK_THROWS_AS(read_pfm(dir / "missing.pfm"), std::runtime_error);
  std::ofstream(dir / "bad.pfm") << "P6\n1 1\n255\n";
  CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("scene file round trip and corruption") {
  const Dataset d = generate(tiny_spec());
  const fs::path dir = scratch_dir("scene");
  fs::create_directories(dir);
  write_scene_file(dir / "s.bin", d.init_scene);
  const SceneModel back = read_scene_file(dir / "s.bin");
  REQUIRE(back.static_set.size() == d.init_scene.static_set.size());
  CHECK(back.static_set[2].mean == d.init_scene.static_set[2].mean);
  CHECK(back.at(1).camera.initial.translation == d.init_scene.at(1).camera.initial.translation);

  std::string bytes = slurp(dir / "s.bin");
  bytes[0] = 'X';
  std::ofstream(dir / "bad.bin", std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_scene_file(dir / "bad.bin"), std::runtime_error);
  std::ofstream(dir / "short.bin", std::ios::binary) << slurp(dir / "s.bin").substr(0, 40);
  CHECK_THROWS_AS(read_scene_file(dir / "short.bin"), std::runtime_error);
  fs::remove_all(dir);
}
