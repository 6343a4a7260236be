// Binary scene and checkpoint files (little-endian, magic + version).
#pragma once

#include "blursplat/optim.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace blursplat {

inline constexpr char kSceneMagic[9] = "BSPLSCNE";
inline constexpr char kCheckpointMagic[9] = "BSPLCKPT";
inline constexpr std::uint32_t kSceneVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SceneModel scene;
  ExposureSpec exposure;
  std::optional<OptimizerState> optimizer;
  int next_epoch = 0;
  std::vector<EpochRecord> history;
};

void write_scene_file(const std::filesystem::path& path, const SceneModel& scene);
/// Throws std::runtime_error naming the path on a bad magic, version or
/// truncated file.
SceneModel read_scene_file(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Checkpoint <-> training state.
Checkpoint to_checkpoint(const TrainState& state, const ExposureSpec& exposure);
TrainState to_train_state(const Checkpoint& ckpt, const AdamConfig& adam = {});

}  // namespace blursplat
