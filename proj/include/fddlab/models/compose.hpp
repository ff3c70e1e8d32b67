#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fddlab/diffusion/ddim.hpp"
#include "fddlab/models/adapters.hpp"

namespace fddlab::models {

enum class Variant { Backbone, Psi, Rho, Eta, Phi };
std::string to_string(Variant v);

/// Conditions for B clips of `frames` rows each.
struct ConditionPack {
  int frames = 1;
  std::vector<std::vector<int>> c_out;       // per clip
  std::vector<std::vector<int>> c_instruct;  // per clip
  Tensor c_vid;                              // [B*frames,C,H,W], row i conditions x_t row i
  Tensor first_frame;                        // [B,C+1,H,W] (first_frame_input), optional

  int clips() const { return static_cast<int>(c_out.size()); }
};

struct ModelSet {
  BackboneConfig cfg;
  EditAdapterConfig edit_cfg;
  VideoAdapterConfig video_cfg;
  LoraConfig lora_cfg;
  ParamSet theta{"theta"};
  ParamSet edit{"theta_edit"};
  ParamSet video{"theta_video"};
  ParamSet lora{"theta_align"};
};

/// Fresh model set: random backbone, adapters at their identity inits, zero-B LoRA.
ModelSet make_model_set(const BackboneConfig& cfg, const EditAdapterConfig& ecfg, const VideoAdapterConfig& vcfg,
                        const LoraConfig& lcfg, num::Rng& rng);

/// v-prediction of the chosen composition. `t` holds one step per clip.
/// Missing conditions are rejected with the variant name.
Tensor compose_forward(Variant v, const ModelSet& m, const Tensor& x_t, const std::vector<int>& t,
                       const ConditionPack& pack);

/// Binds a variant and its conditions as a DDIM denoiser.
diffusion::DenoiseFn denoiser(Variant v, const ModelSet& m, const ConditionPack& pack);

/// DDIM sample of the variant from noise drawn from `rng`.
Tensor sample_variant(Variant v, const ModelSet& m, const ConditionPack& pack, const std::vector<int>& steps,
                      const diffusion::NoiseSchedule& sched, num::Rng& rng);

/// Edits a clip of F' >= window frames in windows of `window` frames. The
/// first window is conditioned on the psi edit of frame 0 (when the video
/// adapter uses first-frame conditioning); each later window on the last
/// edited frame of the previous one. A trailing partial window is aligned
/// to the end of the clip and only its new frames are kept.
Tensor edit_longer_video(Variant v, const ModelSet& m, const Tensor& video, const std::vector<int>& c_out,
                         const std::vector<int>& c_instruct, int window, const std::vector<int>& steps,
                         const diffusion::NoiseSchedule& sched, num::Rng& rng);

/// First frame of each clip edited with psi; returns [B,C,H,W].
Tensor psi_first_frames(const ModelSet& m, const ConditionPack& pack, const std::vector<int>& steps,
                        const diffusion::NoiseSchedule& sched, num::Rng& rng);

/// Model checkpoints carry the architecture and schedule as meta tensors.
void save_model_set(const std::filesystem::path& dir, const ModelSet& m, const diffusion::NoiseSchedule& sched,
                    const std::vector<const ParamSet*>& extra = {});
struct LoadedModel {
  ModelSet model;
  diffusion::NoiseSchedule sched;
  Checkpoint raw;
};
/// Components absent from the checkpoint keep their identity inits.
LoadedModel load_model_set(const std::filesystem::path& dir);

}  // namespace fddlab::models
