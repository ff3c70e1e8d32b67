#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fddlab/models/compose.hpp"
#include "fddlab/worldgen/dataset.hpp"

namespace fddlab::teachers {

struct PretrainConfig {
  int iterations = 3000;
  int batch = 16;  // frames per step; video steps use batch / F clips
  double lr = 1e-4;
  bool cosine_decay = false;  // anneal lr to 5% over the run
  int holdout = 32;  // trailing items of the subset
  int eval_every = 25;
  int grid_every = 0;  // 0 disables sample grids
  int grid_steps = 16;
  double first_frame_prob = 0.5;  // video adapter only
  bool overfit = false;           // train on item 0 alone, no held-out split
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // loss.csv and grid_<iter>.ppm; empty disables
};

struct LossPoint {
  int iteration = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<LossPoint> train;
  std::vector<LossPoint> heldout;  // iteration = optimizer steps taken
  double seconds = 0.0;
};

/// Trains m.theta in place on `frames` (field "frame").
TrainLog pretrain_backbone(models::ModelSet& m, const worldgen::Subset& frames, const diffusion::NoiseSchedule& sched,
                           const PretrainConfig& cfg);

/// Rebuilds m.edit from the current theta and trains it on (c_img, target)
/// pairs with theta frozen.
TrainLog train_edit_adapter(models::ModelSet& m, const worldgen::Subset& pairs, const diffusion::NoiseSchedule& sched,
                            const PretrainConfig& cfg);

/// Re-initializes m.video and trains it on clips (field "video") with theta
/// frozen. Each clip sees its own first frame with probability first_frame_prob.
TrainLog train_video_adapter(models::ModelSet& m, const worldgen::Subset& videos, const diffusion::NoiseSchedule& sched,
                             const PretrainConfig& cfg);

/// Trailing moving average.
std::vector<double> smooth(const std::vector<double>& xs, int window);

}  // namespace fddlab::teachers
