// Photometric losses, Adam, and the three-stage schedule: scene only, then
// camera only, then both.
#pragma once

#include "blursplat/data_synth.hpp"
#include "blursplat/metrics.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace blursplat {

/// Mean over W*H*3 of (pred - target)^2. When `grad` is given it receives
/// d(loss)/d(pred).
double mse_loss(const Image& pred, const Image& target, Image* grad = nullptr);

struct LossTerms {
  double dym = 0.0;
  double stat = 0.0;
  double total() const { return dym + stat; }
};

/// MSE between the blur model and the blurry observation of timestamp t.
/// Gradients (when `grad` is given) are accumulated into it.
double loss_dym(const SceneModel& scene, const Dataset& data, int t, const ExposureSpec& spec,
                const RenderSettings& settings = {}, SceneGradient* grad = nullptr);

/// MSE between the static set rendered at the reference pose and the static
/// target. Only static Gaussians and camera twists receive gradient.
double loss_static(const SceneModel& scene, const Dataset& data, int t, const ExposureSpec& spec,
                   const RenderSettings& settings = {}, SceneGradient* grad = nullptr);

LossTerms loss_total(const SceneModel& scene, const Dataset& data, int t, const ExposureSpec& spec,
                     const RenderSettings& settings = {}, SceneGradient* grad = nullptr);

struct LearningRates {
  double means = 1.6e-3;
  double log_scales = 5e-3;
  double rotations = 1e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;  // base colour and degree-1 coefficients
  double twists = 1e-3;
  double deformation = 1e-3;  // (A_t, E_t) and w_t
};

enum class Stage { scene, pose, joint };
std::string_view to_string(Stage stage);

struct StageSchedule {
  int e1 = 80;
  int e2 = 140;
  int emax = 200;
  LearningRates lr;

  /// E1 = floor(0.4 Emax), E2 = floor(0.7 Emax).
  static StageSchedule with_total(int emax);
  void validate() const;
  Stage stage(int epoch) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments of one parameter block with its own step counter.
struct AdamBlock {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamBlock(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  /// One bias-corrected Adam update of `params` in place.
  void update(std::span<double> params, std::span<const double> grad, std::span<const double> lr,
              const AdamConfig& cfg);
};

inline constexpr int kDeformationBlockSize = 13;  // q_A (4), E_t (3), w_t (6)
inline constexpr int kCameraBlockSize = 12;       // start twist (6), end twist (6)

struct OptimizerState {
  AdamConfig adam;
  AdamBlock gaussians;                  // static then dynamic, packed
  std::vector<AdamBlock> deformation;   // per timestamp
  std::vector<AdamBlock> camera;        // per timestamp

  static OptimizerState for_scene(const SceneModel& scene, const AdamConfig& adam = {});
  /// Throws std::invalid_argument when block sizes do not match the scene.
  void check_matches(const SceneModel& scene) const;
};

struct TrainConfig {
  ExposureSpec exposure = ExposureSpec::with_subframes(7);
  StageSchedule schedule;
  AdamConfig adam;
  std::uint64_t seed = 0;
  Vec3 background = Vec3::Zero();
  int threads = 1;
  bool freeze_camera = false;     // baseline: twists stay zero throughout
  double twist_init_noise = 1e-4;  // breaks the start/end symmetry

  RenderSettings render_settings() const;
  void validate() const;
};

/// Parses the JSON training config; unknown keys are rejected.
TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double l_dym = 0.0;  // means over the epoch's frames
  double l_static = 0.0;
  double l_total = 0.0;
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
};

std::string history_csv(std::span<const EpochRecord> history);

struct TrainState {
  SceneModel scene;
  OptimizerState optimizer;
  int next_epoch = 0;
  std::vector<EpochRecord> history;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Initial training state: dataset init scene, zeroed moments, seeded twist
/// noise unless the camera is frozen.
TrainState initial_state(const Dataset& data, const TrainConfig& config);

/// Reference-subframe pose of every timestamp (the estimated mid-exposure
/// pose).
std::vector<Pose> estimated_poses(const SceneModel& scene, const ExposureSpec& spec);

/// Frame order of an epoch: seeded Fisher-Yates, a pure function of
/// (seed, epoch, count).
std::vector<int> epoch_order(std::uint64_t seed, int epoch, int count);

/// One optimisation pass over `minibatch`: per timestamp, evaluate the total
/// loss and take one Adam step on the groups enabled at `epoch`. Returns the
/// per-frame losses evaluated before each step. Throws NonFiniteLoss.
std::vector<LossTerms> train_step(TrainState& state, const Dataset& data, const TrainConfig& config, int epoch,
                                  std::span<const int> minibatch);

using EpochCallback = std::function<void(const TrainState&)>;

/// Runs epochs state.next_epoch .. Emax-1, appending to the history. The
/// callback runs after every epoch.
void train(TrainState& state, const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean pose error of the estimated poses against the dataset ground truth.
PoseError mean_pose_error(const SceneModel& scene, const Dataset& data, const ExposureSpec& spec);

// Finite-difference check ----------------------------------------------------

enum class ParamClass { means, log_scales, rotations, opacities, colors, camera_twists, deformation, exposure_weight };
inline constexpr int kParamClassCount = 8;
std::string_view to_string(ParamClass c);

struct GradCheckRow {
  ParamClass param;
  int count = 0;  // scalars checked
  double rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 7;
  int gaussians = 5;
  int size = 16;
  int subframes = 3;
  double step = 1e-4;
  double tolerance = 1e-3;
  std::optional<ParamClass> corrupt;  // scales this class's analytic gradient by 1.5
};

/// Analytic vs central-difference gradient of the total loss on a small
/// random scene, per parameter class: |analytic - fd| / |fd|.
std::vector<GradCheckRow> gradient_check(const GradCheckOptions& options);

}  // namespace blursplat
