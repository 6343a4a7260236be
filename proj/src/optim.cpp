#include "blursplat/optim.hpp"

#include "blursplat/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace blursplat {

double mse_loss(const Image& pred, const Image& target, Image* grad) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mse_loss: image dimensions differ");
  const double n = static_cast<double>(pred.size());
  if (grad) *grad = Image(pred.width, pred.height);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    sum += d * d;
    if (grad) grad->data[i] = 2.0 * d / n;
  }
  return sum / n;
}

double loss_dym(const SceneModel& scene, const Dataset& data, int t, const ExposureSpec& spec,
                const RenderSettings& settings, SceneGradient* grad) {
  const FrameObservation& obs = data.frame(t);
  if (obs.blurry.size() == 0) throw std::invalid_argument("loss_dym: timestamp " + std::to_string(t) + " has no blurry observation");
  BlurTape tape;
  const Image pred = synthesize_blur(scene, data.camera, t, spec, settings, grad ? &tape : nullptr);
  Image g;
  const double loss = mse_loss(pred, obs.blurry, grad ? &g : nullptr);
  if (grad) synthesize_blur_backward(scene, data.camera, tape, g, *grad);
  return loss;
}

double loss_static(const SceneModel& scene, const Dataset& data, int t, const ExposureSpec& spec,
                   const RenderSettings& settings, SceneGradient* grad) {
  const FrameObservation& obs = data.frame(t);
  if (obs.static_target.size() == 0) {
    throw std::invalid_argument("loss_static: timestamp " + std::to_string(t) + " has no static target");
  }
  StaticTape tape;
  const Image pred = render_static(scene, data.camera, t, spec, settings, grad ? &tape : nullptr);
  Image g;
  const double loss = mse_loss(pred, obs.static_target, grad ? &g : nullptr);
  if (grad) render_static_backward(scene, tape, g, *grad);
  return loss;
}

LossTerms loss_total(const SceneModel& scene, const Dataset& data, int t, const ExposureSpec& spec,
                     const RenderSettings& settings, SceneGradient* grad) {
  LossTerms l;
  l.dym = loss_dym(scene, data, t, spec, settings, grad);
  l.stat = loss_static(scene, data, t, spec, settings, grad);
  return l;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::scene: return "scene";
    case Stage::pose: return "pose";
    case Stage::joint: return "joint";
  }
  return "joint";
}

StageSchedule StageSchedule::with_total(int emax) {
  StageSchedule s;
  s.emax = emax;
  s.e1 = static_cast<int>(std::floor(0.4 * emax));
  s.e2 = static_cast<int>(std::floor(0.7 * emax));
  return s;
}

void StageSchedule::validate() const {
  if (!(0 <= e1 && e1 <= e2 && e2 <= emax)) {
    throw std::invalid_argument("schedule: need 0 <= E1 <= E2 <= Emax (got " + std::to_string(e1) + ", " +
                                std::to_string(e2) + ", " + std::to_string(emax) + ")");
  }
  for (double r : {lr.means, lr.log_scales, lr.rotations, lr.opacity, lr.color, lr.twists, lr.deformation}) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("schedule: learning rates must be finite and >= 0");
  }
}

Stage StageSchedule::stage(int epoch) const {
  if (epoch < e1) return Stage::scene;
  if (epoch < e2) return Stage::pose;
  return Stage::joint;
}

void AdamBlock::update(std::span<double> params, std::span<const double> grad, std::span<const double> lr,
                       const AdamConfig& cfg) {
  ++step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    params[i] -= lr[i] * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
  }
}

OptimizerState OptimizerState::for_scene(const SceneModel& scene, const AdamConfig& adam) {
  OptimizerState s;
  s.adam = adam;
  s.gaussians = AdamBlock((scene.static_set.size() + scene.dynamic_set.size()) * kGaussianParamCount);
  s.deformation.assign(scene.timestamps.size(), AdamBlock(kDeformationBlockSize));
  s.camera.assign(scene.timestamps.size(), AdamBlock(kCameraBlockSize));
  return s;
}

void OptimizerState::check_matches(const SceneModel& scene) const {
  const std::size_t n = (scene.static_set.size() + scene.dynamic_set.size()) * kGaussianParamCount;
  bool ok = gaussians.m.size() == n && gaussians.v.size() == n && deformation.size() == scene.timestamps.size() &&
            camera.size() == scene.timestamps.size();
  for (const auto& b : deformation) ok = ok && b.m.size() == kDeformationBlockSize && b.v.size() == kDeformationBlockSize;
  for (const auto& b : camera) ok = ok && b.m.size() == kCameraBlockSize && b.v.size() == kCameraBlockSize;
  if (!ok) throw std::invalid_argument("optimizer state does not match the scene layout");
}

RenderSettings TrainConfig::render_settings() const {
  RenderSettings s;
  s.background = background;
  s.threads = threads;
  return s;
}

void TrainConfig::validate() const {
  exposure.validate();
  schedule.validate();
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  if (!(twist_init_noise >= 0.0)) throw std::invalid_argument("config: twist_init_noise must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw std::invalid_argument("config: invalid Adam constants");
  }
}

namespace {
using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
  }
}
}  // namespace

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  reject_unknown(j,
                 {"version", "subframes", "exposure", "reference", "emax", "e1", "e2", "lr", "adam", "seed",
                  "background", "threads", "freeze_camera", "twist_init_noise"},
                 "config");
  try {
    if (j.contains("version") && j["version"].get<int>() != 1) throw std::invalid_argument("config: unsupported version");
    TrainConfig c;
    const int n = j.value("subframes", 7);
    c.exposure = ExposureSpec::with_subframes(n, j.value("exposure", 1.0));
    if (j.contains("reference")) c.exposure.reference = j["reference"].get<int>();
    c.schedule = StageSchedule::with_total(j.value("emax", 200));
    if (j.contains("e1")) c.schedule.e1 = j["e1"].get<int>();
    if (j.contains("e2")) c.schedule.e2 = j["e2"].get<int>();
    if (j.contains("lr")) {
      const json& lr = j["lr"];
      reject_unknown(lr, {"means", "log_scales", "rotations", "opacity", "color", "twists", "deformation"}, "config.lr");
      LearningRates& r = c.schedule.lr;
      r.means = lr.value("means", r.means);
      r.log_scales = lr.value("log_scales", r.log_scales);
      r.rotations = lr.value("rotations", r.rotations);
      r.opacity = lr.value("opacity", r.opacity);
      r.color = lr.value("color", r.color);
      r.twists = lr.value("twists", r.twists);
      r.deformation = lr.value("deformation", r.deformation);
    }
    if (j.contains("adam")) {
      const json& a = j["adam"];
      reject_unknown(a, {"beta1", "beta2", "eps"}, "config.adam");
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
    }
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("background")) {
      const auto bg = j["background"].get<std::vector<double>>();
      if (bg.size() != 3) throw std::invalid_argument("config: background must have 3 components");
      c.background = Vec3(bg[0], bg[1], bg[2]);
    }
    c.threads = j.value("threads", 1);
    c.freeze_camera = j.value("freeze_camera", false);
    c.twist_init_noise = j.value("twist_init_noise", c.twist_init_noise);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

std::string train_config_to_json_text(const TrainConfig& c) {
  json j;
  j["version"] = 1;
  j["subframes"] = c.exposure.subframes;
  j["exposure"] = c.exposure.duration;
  j["reference"] = c.exposure.reference;
  j["emax"] = c.schedule.emax;
  j["e1"] = c.schedule.e1;
  j["e2"] = c.schedule.e2;
  const LearningRates& r = c.schedule.lr;
  j["lr"] = {{"means", r.means},     {"log_scales", r.log_scales}, {"rotations", r.rotations},
             {"opacity", r.opacity}, {"color", r.color},           {"twists", r.twists},
             {"deformation", r.deformation}};
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["seed"] = c.seed;
  j["background"] = {c.background.x(), c.background.y(), c.background.z()};
  j["threads"] = c.threads;
  j["freeze_camera"] = c.freeze_camera;
  j["twist_init_noise"] = c.twist_init_noise;
  return j.dump(2);
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,L_dym,L_static,L_total,rot_err_deg,trans_err\n";
  char buf[256];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.l_dym, r.l_static, r.l_total,
                  r.rot_err_deg, r.trans_err);
    out += buf;
  }
  return out;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

TrainState initial_state(const Dataset& data, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.scene = data.init_scene;
  if (s.scene.timestamp_count() != static_cast<int>(data.frames.size())) {
    throw std::invalid_argument("dataset: initial scene and frame list disagree on the timestamp count");
  }
  for (auto& ts : s.scene.timestamps) {
    ts.camera.start = Twist::zero();
    ts.camera.end = Twist::zero();
    ts.exposure_weight.setZero();
  }
  if (!config.freeze_camera && config.twist_init_noise > 0.0) {
    std::mt19937_64 rng(splitmix64(config.seed ^ 0x7477697374ULL));
    std::normal_distribution<double> noise(0.0, config.twist_init_noise);
    for (auto& ts : s.scene.timestamps) {
      Vec6 a, b;
      for (int i = 0; i < 6; ++i) a[i] = noise(rng);
      for (int i = 0; i < 6; ++i) b[i] = noise(rng);
      ts.camera.start = Twist::from_vector(a);
      ts.camera.end = Twist::from_vector(b);
    }
  }
  s.optimizer = OptimizerState::for_scene(s.scene, config.adam);
  return s;
}

std::vector<Pose> estimated_poses(const SceneModel& scene, const ExposureSpec& spec) {
  std::vector<Pose> out;
  for (int t = 0; t < scene.timestamp_count(); ++t) {
    out.push_back(subframe_poses(scene, t, spec)[static_cast<std::size_t>(spec.reference - 1)]);
  }
  return out;
}

PoseError mean_pose_error(const SceneModel& scene, const Dataset& data, const ExposureSpec& spec) {
  PoseError sum;
  if (data.frames.empty()) return sum;
  for (const FrameObservation& f : data.frames) {
    const Pose est = subframe_poses(scene, f.t, spec)[static_cast<std::size_t>(spec.reference - 1)];
    const PoseError e = pose_error(est, f.gt_pose);
    sum.rotation_deg += e.rotation_deg;
    sum.translation += e.translation;
  }
  sum.rotation_deg /= static_cast<double>(data.frames.size());
  sum.translation /= static_cast<double>(data.frames.size());
  return sum;
}

std::vector<int> epoch_order(std::uint64_t seed, int epoch, int count) {
  std::vector<int> order(static_cast<std::size_t>(std::max(count, 0)));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(epoch)));
  for (int i = count - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  return order;
}

namespace {

std::vector<GaussianPrimitive*> all_gaussians(SceneModel& scene) {
  std::vector<GaussianPrimitive*> out;
  for (auto& g : scene.static_set) out.push_back(&g);
  for (auto& g : scene.dynamic_set) out.push_back(&g);
  return out;
}

/// Renormalises a quaternion stored at params[offset..offset+4), flipping the
/// first moment with the sign.
void renormalize_quat(std::span<double> params, std::span<double> m, std::size_t offset) {
  Vec4 q(params[offset], params[offset + 1], params[offset + 2], params[offset + 3]);
  double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    q = Vec4(1, 0, 0, 0);
    n = 1.0;
  }
  q /= n;
  if (q[0] < 0.0) {
    q = -q;
    for (int k = 0; k < 4; ++k) m[offset + k] = -m[offset + k];
  }
  for (int k = 0; k < 4; ++k) params[offset + k] = q[k];
}

void step_gaussians(SceneModel& scene, const SceneGradient& grad, OptimizerState& opt, const LearningRates& lr) {
  auto gs = all_gaussians(scene);
  const std::size_t n = gs.size();
  std::vector<double> params(n * kGaussianParamCount), g(n * kGaussianParamCount), rates(n * kGaussianParamCount);
  std::array<double, kGaussianParamCount> rate_row{};
  {
    int k = 0;
    for (int i = 0; i < 3; ++i) rate_row[k++] = lr.means;
    for (int i = 0; i < 3; ++i) rate_row[k++] = lr.log_scales;
    for (int i = 0; i < 4; ++i) rate_row[k++] = lr.rotations;
    rate_row[k++] = lr.opacity;
    for (int i = 0; i < 3; ++i) rate_row[k++] = lr.color;
    for (int i = 0; i < 9; ++i) rate_row[k++] = scene.sh_degree >= 1 ? lr.color : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto off = i * kGaussianParamCount;
    pack(*gs[i], std::span<double, kGaussianParamCount>(params.data() + off, kGaussianParamCount));
    const GaussianGrad& gg = i < scene.static_set.size() ? grad.static_set[i] : grad.dynamic_set[i - scene.static_set.size()];
    pack(gg, std::span<double, kGaussianParamCount>(g.data() + off, kGaussianParamCount));
    std::copy(rate_row.begin(), rate_row.end(), rates.begin() + static_cast<std::ptrdiff_t>(off));
  }
  opt.gaussians.update(params, g, rates, opt.adam);
  for (std::size_t i = 0; i < n; ++i) {
    const auto off = i * kGaussianParamCount;
    renormalize_quat(params, opt.gaussians.m, off + 6);
    unpack(std::span<const double, kGaussianParamCount>(params.data() + off, kGaussianParamCount), *gs[i]);
    for (int k = 0; k < 3; ++k) gs[i]->log_scale[k] = std::clamp(gs[i]->log_scale[k], std::log(kMinScale), std::log(kMaxScale));
  }
}

void step_deformation(TimestampState& ts, const TimestampGrad& tg, AdamBlock& block, const AdamConfig& adam,
                      double lr) {
  std::array<double, kDeformationBlockSize> p{}, g{}, rates{};
  const Vec4 q = wxyz(ts.deformation.rotation);
  for (int i = 0; i < 4; ++i) p[i] = q[i];
  for (int i = 0; i < 3; ++i) p[4 + i] = ts.deformation.translation[i];
  for (int i = 0; i < 6; ++i) p[7 + i] = ts.exposure_weight[i];
  for (int i = 0; i < 4; ++i) g[i] = tg.deformation.rotation[i];
  for (int i = 0; i < 3; ++i) g[4 + i] = tg.deformation.translation[i];
  for (int i = 0; i < 6; ++i) g[7 + i] = tg.exposure_weight[i];
  rates.fill(lr);
  block.update(p, g, rates, adam);
  renormalize_quat(p, block.m, 0);
  ts.deformation.rotation = Quat(p[0], p[1], p[2], p[3]);
  for (int i = 0; i < 3; ++i) ts.deformation.translation[i] = p[4 + i];
  for (int i = 0; i < 6; ++i) ts.exposure_weight[i] = p[7 + i];
}

void step_camera(TimestampState& ts, const TimestampGrad& tg, AdamBlock& block, const AdamConfig& adam, double lr) {
  std::array<double, kCameraBlockSize> p{}, g{}, rates{};
  const Vec6 s = ts.camera.start.vector(), e = ts.camera.end.vector();
  for (int i = 0; i < 6; ++i) {
    p[i] = s[i];
    p[6 + i] = e[i];
    g[i] = tg.start_twist[i];
    g[6 + i] = tg.end_twist[i];
  }
  rates.fill(lr);
  block.update(p, g, rates, adam);
  ts.camera.start = Twist::from_vector(Eigen::Map<const Vec6>(p.data()));
  ts.camera.end = Twist::from_vector(Eigen::Map<const Vec6>(p.data() + 6));
}

bool scene_is_finite(const SceneModel& scene) {
  std::array<double, kGaussianParamCount> v{};
  for (const auto* set : {&scene.static_set, &scene.dynamic_set}) {
    for (const auto& g : *set) {
      pack(g, v);
      for (double x : v) {
        if (!std::isfinite(x)) return false;
      }
    }
  }
  for (const auto& ts : scene.timestamps) {
    if (!wxyz(ts.deformation.rotation).allFinite() || !ts.deformation.translation.allFinite() ||
        !ts.exposure_weight.allFinite() || !ts.camera.start.vector().allFinite() || !ts.camera.end.vector().allFinite()) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::vector<LossTerms> train_step(TrainState& state, const Dataset& data, const TrainConfig& config, int epoch,
                                  std::span<const int> minibatch) {
  if (epoch < 0 || epoch >= config.schedule.emax) {
    throw std::invalid_argument("train_step: epoch " + std::to_string(epoch) + " outside [0, Emax)");
  }
  state.optimizer.check_matches(state.scene);
  const Stage stage = config.schedule.stage(epoch);
  const bool update_scene = config.freeze_camera || stage != Stage::pose;
  const bool update_camera = !config.freeze_camera && stage != Stage::scene;
  const RenderSettings settings = config.render_settings();
  const LearningRates& lr = config.schedule.lr;

  std::vector<LossTerms> losses;
  for (int t : minibatch) {
    SceneGradient grad = SceneGradient::zeros_like(state.scene);
    LossTerms l;
    try {
      l = loss_total(state.scene, data, t, config.exposure, settings, &grad);
    } catch (const std::invalid_argument& e) {
      // the rasterizer refuses NaN splats before a loss exists
      if (scene_is_finite(state.scene)) throw;
      throw NonFiniteLoss("non-finite parameters at epoch " + std::to_string(epoch) + ", timestamp " +
                          std::to_string(t) + " (" + e.what() + ")");
    }
    if (!std::isfinite(l.total())) {
      throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", timestamp " + std::to_string(t) +
                          " (L_dym = " + std::to_string(l.dym) + ", L_static = " + std::to_string(l.stat) + ")");
    }
    losses.push_back(l);
    const auto ti = static_cast<std::size_t>(t);
    if (update_scene) {
      step_gaussians(state.scene, grad, state.optimizer, lr);
      step_deformation(state.scene.timestamps[ti], grad.timestamps[ti], state.optimizer.deformation[ti],
                       state.optimizer.adam, lr.deformation);
    }
    if (update_camera) {
      step_camera(state.scene.timestamps[ti], grad.timestamps[ti], state.optimizer.camera[ti], state.optimizer.adam,
                  lr.twists);
    }
  }
  return losses;
}

void train(TrainState& state, const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const int count = static_cast<int>(data.frames.size());
  for (int epoch = state.next_epoch; epoch < config.schedule.emax; ++epoch) {
    const std::vector<int> order = epoch_order(config.seed, epoch, count);
    std::vector<int> batch;
    batch.reserve(order.size());
    for (int i : order) batch.push_back(data.frames[static_cast<std::size_t>(i)].t);
    const std::vector<LossTerms> losses = train_step(state, data, config, epoch, batch);

    EpochRecord rec;
    rec.epoch = epoch;
    for (const LossTerms& l : losses) {
      rec.l_dym += l.dym;
      rec.l_static += l.stat;
    }
    if (!losses.empty()) {
      rec.l_dym /= static_cast<double>(losses.size());
      rec.l_static /= static_cast<double>(losses.size());
    }
    rec.l_total = rec.l_dym + rec.l_static;
    const PoseError pe = mean_pose_error(state.scene, data, config.exposure);
    rec.rot_err_deg = pe.rotation_deg;
    rec.trans_err = pe.translation;
    state.history.push_back(rec);
    state.next_epoch = epoch + 1;
    if (on_epoch) on_epoch(state);
  }
}

std::string_view to_string(ParamClass c) {
  switch (c) {
    case ParamClass::means: return "means";
    case ParamClass::log_scales: return "log_scales";
    case ParamClass::rotations: return "rotations";
    case ParamClass::opacities: return "opacities";
    case ParamClass::colors: return "colors";
    case ParamClass::camera_twists: return "camera_twists";
    case ParamClass::deformation: return "deformation";
    case ParamClass::exposure_weight: return "exposure_weight";
  }
  return "?";
}

namespace {

/// Pointers to every scalar of one class together with its analytic
/// gradient slot.
struct ScalarRef {
  double* param;
  double* grad;
};

std::vector<ScalarRef> class_scalars(ParamClass c, SceneModel& scene, SceneGradient& grad) {
  std::vector<ScalarRef> out;
  auto per_gaussian = [&](auto&& fn) {
    for (std::size_t i = 0; i < scene.static_set.size(); ++i) fn(scene.static_set[i], grad.static_set[i]);
    for (std::size_t i = 0; i < scene.dynamic_set.size(); ++i) fn(scene.dynamic_set[i], grad.dynamic_set[i]);
  };
  switch (c) {
    case ParamClass::means:
      per_gaussian([&](GaussianPrimitive& g, GaussianGrad& gg) {
        for (int k = 0; k < 3; ++k) out.push_back({&g.mean[k], &gg.mean[k]});
      });
      break;
    case ParamClass::log_scales:
      per_gaussian([&](GaussianPrimitive& g, GaussianGrad& gg) {
        for (int k = 0; k < 3; ++k) out.push_back({&g.log_scale[k], &gg.log_scale[k]});
      });
      break;
    case ParamClass::rotations:
      per_gaussian([&](GaussianPrimitive& g, GaussianGrad& gg) {
        out.push_back({&g.rotation.w(), &gg.rotation[0]});
        out.push_back({&g.rotation.x(), &gg.rotation[1]});
        out.push_back({&g.rotation.y(), &gg.rotation[2]});
        out.push_back({&g.rotation.z(), &gg.rotation[3]});
      });
      break;
    case ParamClass::opacities:
      per_gaussian([&](GaussianPrimitive& g, GaussianGrad& gg) { out.push_back({&g.opacity_logit, &gg.opacity_logit}); });
      break;
    case ParamClass::colors:
      per_gaussian([&](GaussianPrimitive& g, GaussianGrad& gg) {
        for (int k = 0; k < 3; ++k) out.push_back({&g.color[k], &gg.color[k]});
        for (int k = 0; k < 9; ++k) out.push_back({g.sh1.data() + k, gg.sh1.data() + k});
      });
      break;
    case ParamClass::camera_twists:
      for (std::size_t t = 0; t < scene.timestamps.size(); ++t) {
        CameraTrack& cam = scene.timestamps[t].camera;
        TimestampGrad& tg = grad.timestamps[t];
        for (int k = 0; k < 3; ++k) out.push_back({&cam.start.omega[k], &tg.start_twist[k]});
        for (int k = 0; k < 3; ++k) out.push_back({&cam.start.v[k], &tg.start_twist[3 + k]});
        for (int k = 0; k < 3; ++k) out.push_back({&cam.end.omega[k], &tg.end_twist[k]});
        for (int k = 0; k < 3; ++k) out.push_back({&cam.end.v[k], &tg.end_twist[3 + k]});
      }
      break;
    case ParamClass::deformation:
      for (std::size_t t = 0; t < scene.timestamps.size(); ++t) {
        AffineWarp& d = scene.timestamps[t].deformation;
        RigidGrad& dg = grad.timestamps[t].deformation;
        out.push_back({&d.rotation.w(), &dg.rotation[0]});
        out.push_back({&d.rotation.x(), &dg.rotation[1]});
        out.push_back({&d.rotation.y(), &dg.rotation[2]});
        out.push_back({&d.rotation.z(), &dg.rotation[3]});
        for (int k = 0; k < 3; ++k) out.push_back({&d.translation[k], &dg.translation[k]});
      }
      break;
    case ParamClass::exposure_weight:
      for (std::size_t t = 0; t < scene.timestamps.size(); ++t) {
        for (int k = 0; k < 6; ++k) {
          out.push_back({&scene.timestamps[t].exposure_weight[k], &grad.timestamps[t].exposure_weight[k]});
        }
      }
      break;
  }
  return out;
}

Dataset gradcheck_problem(const GradCheckOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dataset d;
  d.camera = Camera{16.0 * o.size / 16.0, 16.0 * o.size / 16.0, o.size / 2.0, o.size / 2.0, o.size, o.size, 0.1};
  SceneModel& s = d.init_scene;
  s.sh_degree = 1;
  const int n_dynamic = std::max(1, o.gaussians * 2 / 5);
  const int n_static = std::max(1, o.gaussians - n_dynamic);
  for (int i = 0; i < n_static + n_dynamic; ++i) {
    GaussianPrimitive g;
    g.mean = Vec3(0.6 * u(rng), 0.6 * u(rng), 3.5 + 0.5 * u(rng));
    g.log_scale = Vec3(std::log(0.35 + 0.1 * u(rng)), std::log(0.3 + 0.1 * u(rng)), std::log(0.3 + 0.1 * u(rng)));
    g.rotation = normalized_canonical(Quat(1.0, 0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng)));
    g.opacity_logit = 0.8 * u(rng);
    g.color = Vec3(0.5 + 0.15 * u(rng), 0.5 + 0.15 * u(rng), 0.5 + 0.15 * u(rng));
    for (int k = 0; k < 9; ++k) g.sh1.data()[k] = 0.1 * u(rng);
    (i < n_static ? s.static_set : s.dynamic_set).push_back(g);
  }
  TimestampState ts;
  ts.deformation.rotation = normalized_canonical(Quat(1.0, 0.05 * u(rng), 0.05 * u(rng), 0.05 * u(rng)));
  ts.deformation.translation = Vec3(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng));
  for (int k = 0; k < 6; ++k) ts.exposure_weight[k] = 0.05 * u(rng);
  ts.camera.initial.rotation = normalized_canonical(Quat(1.0, 0.02 * u(rng), 0.02 * u(rng), 0.02 * u(rng)));
  ts.camera.initial.translation = Vec3(0.05 * u(rng), 0.05 * u(rng), 0.05 * u(rng));
  Vec6 a, b;
  for (int k = 0; k < 6; ++k) a[k] = 0.02 * u(rng);
  for (int k = 0; k < 6; ++k) b[k] = 0.02 * u(rng);
  ts.camera.start = Twist::from_vector(a);
  ts.camera.end = Twist::from_vector(b);
  s.timestamps.push_back(ts);

  FrameObservation f;
  f.t = 0;
  std::uniform_real_distribution<double> pix(0.0, 1.0);
  f.blurry = Image(o.size, o.size);
  f.static_target = Image(o.size, o.size);
  for (double& v : f.blurry.data) v = pix(rng);
  for (double& v : f.static_target.data) v = pix(rng);
  f.gt_pose = f.init_pose = ts.camera.initial;
  d.frames.push_back(std::move(f));
  return d;
}

}  // namespace

std::vector<GradCheckRow> gradient_check(const GradCheckOptions& o) {
  if (o.gaussians < 2 || o.size < 4 || o.subframes < 1 || !(o.step > 0.0)) {
    throw std::invalid_argument("gradcheck: need >= 2 Gaussians, >= 4 px and >= 1 subframe");
  }
  Dataset data = gradcheck_problem(o);
  const ExposureSpec spec = ExposureSpec::with_subframes(o.subframes);
  RenderSettings settings;
  settings.background = Vec3(0.1, 0.2, 0.3);
  // A wide support keeps the loss smooth under the finite-difference step.
  settings.cutoff_sigma = 8.0;

  SceneModel scene = data.init_scene;
  SceneGradient grad = SceneGradient::zeros_like(scene);
  loss_total(scene, data, 0, spec, settings, &grad);

  std::vector<GradCheckRow> rows;
  for (int ci = 0; ci < kParamClassCount; ++ci) {
    const auto c = static_cast<ParamClass>(ci);
    std::vector<ScalarRef> refs = class_scalars(c, scene, grad);
    double diff_sq = 0.0, fd_sq = 0.0;
    for (ScalarRef& r : refs) {
      const double saved = *r.param;
      *r.param = saved + o.step;
      const double lp = loss_total(scene, data, 0, spec, settings).total();
      *r.param = saved - o.step;
      const double lm = loss_total(scene, data, 0, spec, settings).total();
      *r.param = saved;
      const double fd = (lp - lm) / (2.0 * o.step);
      double analytic = *r.grad;
      if (o.corrupt && *o.corrupt == c) analytic *= 1.5;
      diff_sq += (analytic - fd) * (analytic - fd);
      fd_sq += fd * fd;
    }
    GradCheckRow row;
    row.param = c;
    row.count = static_cast<int>(refs.size());
    row.rel_error = fd_sq > 0.0 ? std::sqrt(diff_sq / fd_sq) : std::sqrt(diff_sq);
    row.passed = row.rel_error < o.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace blursplat
