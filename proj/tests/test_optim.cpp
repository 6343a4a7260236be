#include "blursplat/optim.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace blursplat;
using namespace bs_test;

namespace {

bool same_gaussians(const std::vector<GaussianPrimitive>& a, const std::vector<GaussianPrimitive>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::array<double, kGaussianParamCount> pa{}, pb{};
    pack(a[i], pa);
    pack(b[i], pb);
    if (pa != pb) return false;
  }
  return true;
}

bool same_twists(const SceneModel& a, const SceneModel& b) {
  for (int t = 0; t < a.timestamp_count(); ++t) {
    if (a.at(t).camera.start.vector() != b.at(t).camera.start.vector()) return false;
    if (a.at(t).camera.end.vector() != b.at(t).camera.end.vector()) return false;
  }
  return true;
}

bool same_object_motion(const SceneModel& a, const SceneModel& b) {
  for (int t = 0; t < a.timestamp_count(); ++t) {
    if (wxyz(a.at(t).deformation.rotation) != wxyz(b.at(t).deformation.rotation)) return false;
    if (a.at(t).deformation.translation != b.at(t).deformation.translation) return false;
    if (a.at(t).exposure_weight != b.at(t).exposure_weight) return false;
  }
  return true;
}

bool scene_unchanged(const SceneModel& a, const SceneModel& b) {
  return same_gaussians(a.static_set, b.static_set) && same_gaussians(a.dynamic_set, b.dynamic_set) &&
         same_object_motion(a, b);
}

TrainConfig small_config(int emax = 6) {
  TrainConfig c;
  c.exposure = ExposureSpec::with_subframes(3);
  c.schedule.emax = emax;
  c.schedule.e1 = emax / 3;
  c.schedule.e2 = 2 * emax / 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("mse arithmetic and gradient") {
  const Image black(4, 4, 0.0), gray(4, 4, 0.5);
  CHECK(mse_loss(black, gray) == 0.25);
  CHECK(mse_loss(gray, gray) == 0.0);
  Image g;
  mse_loss(black, gray, &g);
  for (double v : g.data) CHECK(v == doctest::Approx(2.0 * -0.5 / 48.0).epsilon(1e-15));
  CHECK_THROWS_AS(mse_loss(Image(4, 4), Image(5, 4)), std::invalid_argument);
}

TEST_CASE("schedule defaults and stage boundaries") {
  const StageSchedule d;
  CHECK(d.emax == 200);
  const StageSchedule s = StageSchedule::with_total(200);
  CHECK(s.e1 == 80);
  CHECK(s.e2 == 140);
  CHECK(s.stage(0) == Stage::scene);
  CHECK(s.stage(79) == Stage::scene);
  CHECK(s.stage(80) == Stage::pose);
  CHECK(s.stage(139) == Stage::pose);
  CHECK(s.stage(140) == Stage::joint);
  StageSchedule bad = s;
  bad.e1 = 150;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("adam first step moves each parameter by the learning rate") {
  AdamBlock b(3);
  std::vector<double> p = {1.0, 2.0, 3.0};
  const std::vector<double> g = {0.5, -2.0, 0.0};
  const std::vector<double> lr = {0.1, 0.01, 0.1};
  b.update(p, g, lr, AdamConfig{});
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p[1] == doctest::Approx(2.01).epsilon(1e-7));
  CHECK(p[2] == 3.0);
  CHECK(b.step == 1);
}

TEST_CASE("losses on a synthetic dataset") {
  const Dataset data = generate(tiny_spec());
  const ExposureSpec spec = ExposureSpec::with_subframes(3);

  SUBCASE("static loss equals an independent MSE and leaves dynamic Gaussians alone") {
    SceneGradient g = SceneGradient::zeros_like(data.init_scene);
    const double l = loss_static(data.init_scene, data, 1, spec, {}, &g);
    const Image r = render(data.init_scene.static_set, data.camera, subframe_poses(data.init_scene, 1, spec)[1]);
    const Image& target = data.frame(1).static_target;
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += (r.data[i] - target.data[i]) * (r.data[i] - target.data[i]);
    CHECK(std::abs(l - s / static_cast<double>(r.size())) < 1e-12);
    CHECK(l > 0.0);
    for (const auto& dg : g.dynamic_set) {
      std::array<double, kGaussianParamCount> v{};
      pack(dg, v);
      for (double x : v) CHECK(x == 0.0);
    }
    for (const auto& tg : g.timestamps) {
      CHECK(tg.exposure_weight.isZero(0.0));
      CHECK(tg.deformation.translation.isZero(0.0));
      CHECK(tg.deformation.rotation.isZero(0.0));
    }
  }

  SUBCASE("total loss is the sum of its terms") {
    for (int t = 0; t < 3; ++t) {
      const LossTerms l = loss_total(data.init_scene, data, t, spec);
      CHECK(std::abs(l.total() - (loss_dym(data.init_scene, data, t, spec) + loss_static(data.init_scene, data, t, spec))) <
            1e-12);
    }
  }

  SUBCASE("total loss matches the two squared-error terms computed by hand") {
    const Image blur = synthesize_blur(data.init_scene, data.camera, 0, spec);
    const Image stat = render_static(data.init_scene, data.camera, 0, spec);
    const double expected = mse(blur, data.frame(0).blurry) + mse(stat, data.frame(0).static_target);
    CHECK(std::abs(loss_total(data.init_scene, data, 0, spec).total() - expected) < 1e-12);
  }

  SUBCASE("perfect prediction gives zero loss and zero gradient") {
    Dataset d = data;
    for (auto& f : d.frames) {
      f.blurry = synthesize_blur(d.init_scene, d.camera, f.t, spec);
      f.static_target = render_static(d.init_scene, d.camera, f.t, spec);
    }
    SceneGradient g = SceneGradient::zeros_like(d.init_scene);
    CHECK(loss_total(d.init_scene, d, 2, spec, {}, &g).total() == 0.0);
    for (const auto& sg : g.static_set) CHECK(sg.mean.isZero(0.0));
    for (const auto& tg : g.timestamps) CHECK(tg.start_twist.isZero(0.0));
  }

  SUBCASE("unknown timestamp is an error") {
    CHECK_THROWS(loss_dym(data.init_scene, data, 7, spec));
    CHECK_THROWS(loss_static(data.init_scene, data, -1, spec));
  }
}

TEST_CASE("stage gating is bitwise exact") {
  const Dataset data = generate(tiny_spec());
  const TrainConfig cfg = small_config(6);  // e1 = 2, e2 = 4
  const std::vector<int> batch = {0, 1, 2};

  TrainState state = initial_state(data, cfg);
  TrainState before = state;

  SUBCASE("scene stage leaves camera twists untouched") {
    train_step(state, data, cfg, 0, batch);
    CHECK(same_twists(state.scene, before.scene));
    CHECK_FALSE(same_gaussians(state.scene.static_set, before.scene.static_set));
    CHECK_FALSE(same_gaussians(state.scene.dynamic_set, before.scene.dynamic_set));
    CHECK_FALSE(same_object_motion(state.scene, before.scene));
    for (const auto& b : state.optimizer.camera) CHECK(b.step == 0);
  }

  SUBCASE("pose stage leaves every scene parameter untouched") {
    train_step(state, data, cfg, 0, batch);  // scene stage first, as in training
    before = state;
    train_step(state, data, cfg, 2, batch);
    train_step(state, data, cfg, 3, batch);
    CHECK(scene_unchanged(state.scene, before.scene));
    CHECK(state.optimizer.gaussians.step == before.optimizer.gaussians.step);
    CHECK_FALSE(same_twists(state.scene, before.scene));
  }

  SUBCASE("joint stage moves both groups") {
    train_step(state, data, cfg, 4, batch);
    CHECK_FALSE(same_twists(state.scene, before.scene));
    CHECK_FALSE(same_gaussians(state.scene.static_set, before.scene.static_set));
    CHECK_FALSE(same_object_motion(state.scene, before.scene));
  }

  SUBCASE("frozen camera keeps twists at zero in every stage") {
    TrainConfig frozen = cfg;
    frozen.freeze_camera = true;
    TrainState s = initial_state(data, frozen);
    for (int e : {0, 2, 4}) train_step(s, data, frozen, e, batch);
    for (const auto& ts : s.scene.timestamps) {
      CHECK(ts.camera.start.vector().isZero(0.0));
      CHECK(ts.camera.end.vector().isZero(0.0));
    }
  }

  SUBCASE("epoch outside the schedule is rejected") {
    CHECK_THROWS_AS(train_step(state, data, cfg, 6, batch), std::invalid_argument);
  }
}

TEST_CASE("train with Emax = 0 returns the initial scene") {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = small_config(6);
  cfg.schedule.emax = cfg.schedule.e1 = cfg.schedule.e2 = 0;
  TrainState state = initial_state(data, cfg);
  const TrainState before = state;
  train(state, data, cfg);
  CHECK(state.history.empty());
  CHECK(scene_unchanged(state.scene, before.scene));
  CHECK(same_twists(state.scene, before.scene));
}

TEST_CASE("best-so-far loss decreases over a short run") {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = small_config(12);
  TrainState state = initial_state(data, cfg);
  int callbacks = 0;
  train(state, data, cfg, [&](const TrainState&) { ++callbacks; });
  REQUIRE(state.history.size() == 12);
  CHECK(callbacks == 12);
  double best = state.history[0].l_total;
  for (const auto& r : state.history) best = std::min(best, r.l_total);
  CHECK(best < state.history[0].l_total);
  CHECK(state.next_epoch == 12);
}

TEST_CASE("scene-only fitting with true poses never loses its best loss") {
  Dataset data = generate(tiny_spec());
  for (int t = 0; t < data.init_scene.timestamp_count(); ++t) {
    data.init_scene.at(t).camera = data.gt_scene.at(t).camera;
  }
  TrainConfig cfg = small_config(8);
  cfg.freeze_camera = true;
  TrainState state = initial_state(data, cfg);
  train(state, data, cfg);
  double best = state.history[0].l_total;
  int improvements = 0;
  for (const auto& r : state.history) {
    if (r.l_total < best) ++improvements;
    best = std::min(best, r.l_total);
    CHECK(r.rot_err_deg < 1e-9);
  }
  CHECK(improvements > 0);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  Dataset data = generate(tiny_spec());
  data.init_scene.static_set[0].color = Vec3::Constant(std::nan(""));
  const TrainConfig cfg = small_config(3);
  TrainState state = initial_state(data, cfg);
  CHECK_THROWS_AS(train(state, data, cfg), NonFiniteLoss);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(9, 3, 24);
  CHECK(a == epoch_order(9, 3, 24));
  CHECK(a != epoch_order(9, 4, 24));
  CHECK(a != epoch_order(10, 3, 24));
  CHECK(std::set<int>(a.begin(), a.end()).size() == 24);
  CHECK(*std::min_element(a.begin(), a.end()) == 0);
  CHECK(*std::max_element(a.begin(), a.end()) == 23);
}

TEST_CASE("initial state seeds twist noise unless the camera is frozen") {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = small_config();
  const TrainState a = initial_state(data, cfg);
  CHECK(a.scene.at(0).camera.start.vector().norm() > 0.0);
  CHECK(a.scene.at(0).camera.start.vector().norm() < 1e-3);
  CHECK(same_twists(a.scene, initial_state(data, cfg).scene));
  cfg.freeze_camera = true;
  CHECK(initial_state(data, cfg).scene.at(0).camera.start.vector().isZero(0.0));
}

TEST_CASE("training config JSON round trip and validation") {
  TrainConfig c = small_config();
  c.schedule.lr.means = 3e-4;
  c.background = Vec3(0.1, 0.2, 0.3);
  const TrainConfig back = train_config_from_json_text(train_config_to_json_text(c));
  CHECK(back.schedule.lr.means == 3e-4);
  CHECK(back.schedule.e1 == c.schedule.e1);
  CHECK(back.exposure.subframes == 3);
  CHECK(back.background == c.background);
  CHECK_THROWS(train_config_from_json_text(R"({"version":1,"bogus":1})"));
  CHECK_THROWS(train_config_from_json_text(R"({"version":1,"e1":5,"e2":3,"emax":10})"));
}

TEST_CASE("history CSV layout") {
  EpochRecord r;
  r.epoch = 2;
  r.l_total = 0.5;
  const std::string csv = history_csv(std::span<const EpochRecord>(&r, 1));
  CHECK(csv.rfind("epoch,L_dym,L_static,L_total,rot_err_deg,trans_err\n", 0) == 0);
  CHECK(csv.find("\n2,0,0,0.5,0,0\n") != std::string::npos);
}

TEST_CASE("gradient check passes every class and catches a corrupted one") {
  const auto rows = gradient_check(GradCheckOptions{});
  REQUIRE(rows.size() == static_cast<std::size_t>(kParamClassCount));
  std::set<std::string_view> names;
  for (const auto& r : rows) {
    INFO(to_string(r.param) << " rel " << r.rel_error);
    CHECK(r.passed);
    CHECK(r.count > 0);
    names.insert(to_string(r.param));
  }
  CHECK(names.size() == static_cast<std::size_t>(kParamClassCount));

  GradCheckOptions bad;
  bad.corrupt = ParamClass::rotations;
  for (const auto& r : gradient_check(bad)) CHECK(r.passed == (r.param != ParamClass::rotations));
}
