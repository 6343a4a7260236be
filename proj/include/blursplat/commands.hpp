// Command implementations behind the blursplat CLI. Each throws on failure;
// the CLI maps exceptions to a nonzero exit code.
#pragma once

#include "blursplat/checkpoint.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace blursplat {

struct SynthOptions {
  std::optional<std::string> preset;
  std::optional<std::filesystem::path> spec_file;  // JSON SyntheticSpec, may name a preset
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
};

/// Generates and exports a dataset.
Dataset cmd_synth(const SynthOptions& options, std::ostream& log);

struct TrainOptions {
  std::filesystem::path dataset_dir;
  std::optional<std::filesystem::path> config_file;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> resume;
};

/// Writes config.json, history.csv, stage_e1.ckpt, stage_e2.ckpt,
/// last_good.ckpt (after every epoch) and final.ckpt into out_dir.
/// Rethrows NonFiniteLoss after writing the diagnostic.
TrainState cmd_train(const TrainOptions& options, std::ostream& log);

/// Loads the config (or defaults), applying seed/threads overrides and the
/// dataset background when the config does not declare one.
TrainConfig load_train_config(const std::optional<std::filesystem::path>& file, const Dataset& data,
                              std::optional<std::uint64_t> seed, std::optional<int> threads);

struct RenderOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset_dir;
  int t = 0;
  std::string choice = "middle";
  std::filesystem::path out_dir;
};

struct RenderOutputs {
  Image sharp;
  Image blur;
  Image abs_diff;  // |blur - observed blurry|
};

/// Writes sharp_<choice>, blur and absdiff as PFM and PNG.
RenderOutputs cmd_render(const RenderOptions& options, std::ostream& log);

struct EvalRow {
  std::string label;  // timestamp or "mean"
  double psnr_sharp = 0.0;
  double ssim_sharp = 0.0;
  double psnr_blur = 0.0;
  double ssim_blur = 0.0;
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
  double sharpness = 0.0;
};

/// Per-frame report plus a trailing aggregate (mean) row.
std::vector<EvalRow> evaluate(const SceneModel& scene, const ExposureSpec& exposure, const Dataset& data);
std::string eval_csv(const std::vector<EvalRow>& rows);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset_dir;
  std::filesystem::path out_csv;
};

std::vector<EvalRow> cmd_eval(const EvalOptions& options, std::ostream& log);

struct GradcheckOptions {
  int gaussians = 5;
  int size = 16;
  std::uint64_t seed = 7;
  std::optional<std::string> corrupt;
};

/// Prints one row per parameter class; returns true when every class passes.
bool cmd_gradcheck(const GradcheckOptions& options, std::ostream& log);

ParamClass parse_param_class(std::string_view name);

}  // namespace blursplat
