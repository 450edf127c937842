#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "dedgan/data.hpp"
#include "dedgan/losses.hpp"
#include "dedgan/networks.hpp"
#include "dedgan/numerics/adam.hpp"

namespace dedgan {

struct TrainConfig {
  ArchConfig arch = ArchConfig::desk(20);
  LossWeightSet weights;
  EquilibriumState equilibrium;
  AdamConfig adam;
  Index batch_size = 16;
  std::uint64_t steps = 2000;
  std::uint64_t seed = 0;
  /// Steps between periodic checkpoints; 0 disables them.
  std::uint64_t checkpoint_interval = 0;
  /// Sampling range of the pose code c. Left at (0, 0) it is filled from the
  /// training split when training starts.
  double code_min = 0.0, code_max = 0.0;

  bool pose_classification() const { return arch.pose_classes > 0; }
  bool has_code_range() const { return code_max > code_min; }
  void validate() const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct TrainingState {
  TrainConfig config;
  Generator<float> generator;
  Discriminator<float> discriminator;
  AdamState<float> g_adam, d_adam;
  EquilibriumState equilibrium;
  std::uint64_t step = 0;
  RngStream rng;
};

/// Fresh networks drawn from RngStream(config.seed); the same stream then
/// drives crops, noise and code sampling.
TrainingState initial_state(const TrainConfig& config);

/// One iteration: a discriminator update against a detached generated batch,
/// then a generator update with the discriminator frozen on fresh (z, c).
/// Running batch-norm statistics only move on the real-image pass of D and the
/// generator pass of the G update. k is updated from the D update's L(x) and
/// L(G(x)). `after_d_update` runs between the two updates.
LossReport train_step(TrainingState& state, const Batch& batch, const std::function<void()>& after_d_update = {});

/// Batch `state.step` of the training split, cropped with the state stream.
Batch next_batch(TrainingState& state, const Dataset& dataset);

struct TrainOptions {
  /// JSON-lines log, appended to; empty disables logging.
  std::filesystem::path log_path;
  /// Periodic checkpoints go to <dir>/step_<nnnnnn>.ckpt; empty disables them.
  std::filesystem::path checkpoint_dir;
  /// Include wall-clock seconds in each log record.
  bool log_wall_time = true;
  std::function<void(const LossReport&)> on_step;
};

/// Runs train_step until state.step == config.steps. Fills the code range from
/// the dataset when unset. Returns the last report (default when no step ran).
LossReport train(TrainingState& state, const Dataset& dataset, const TrainOptions& options = {});

/// Fixed-key JSON object for one log line.
std::string log_record(const LossReport& report, double wall_seconds, bool with_wall_time);

void save_checkpoint(TrainingState& state, const std::filesystem::path& path);
TrainingState load_checkpoint(const std::filesystem::path& path);
/// Generator-only restore for evaluation.
Generator<float> load_generator(const std::filesystem::path& path);

}  // namespace dedgan
