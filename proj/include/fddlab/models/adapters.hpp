#pragma once

#include <vector>

#include "fddlab/models/backbone.hpp"

namespace fddlab::models {

struct EditAdapterConfig {
  int instr_channels = 8;  // instruction map planes fed to the fusion conv
};

/// ControlNet-style adapter: copies of the backbone encoder blocks, a fusion
/// conv over concat(x_t, c_img, instruction map) and zero 1x1 connectors.
ParamSet make_edit_adapter(const ParamSet& theta, const BackboneConfig& cfg, const EditAdapterConfig& ecfg,
                           num::Rng& rng);

struct EditResiduals {
  Tensor s1, s2, mid;
};

/// Residuals for every row of x_t. `c_img` matches x_t; instructions are
/// per clip and repeated over `frames` rows.
EditResiduals edit_adapter_forward(const ParamSet& edit, const BackboneConfig& cfg, const Tensor& x_t,
                                   const Tensor& c_img, const Tensor& cond_rows,
                                   const std::vector<std::vector<int>>& instructions, int frames);

struct VideoAdapterConfig {
  int max_frames = 16;
  bool first_frame = true;
};

/// One temporal layer per hook site plus a first-frame encoder. Output
/// projections start at zero so every layer is the identity.
ParamSet make_video_adapter(const BackboneConfig& cfg, const VideoAdapterConfig& vcfg, num::Rng& rng);

/// First-frame condition [B,4,H,W]: RGB plus a presence flag. Clips with
/// flag 0 see zeros.
Tensor first_frame_input(const Tensor& first_frames, const std::vector<float>& flags);

/// Builds the temporal hook for rows laid out as [clips * frames].
/// `first_frame` and `cond_rows` ([clips * frames, d]) may be undefined.
TemporalHook make_temporal_hook(const ParamSet& video, const BackboneConfig& cfg, const VideoAdapterConfig& vcfg,
                                int frames, const Tensor& first_frame, const Tensor& cond_rows = {});

struct LoraConfig {
  int rank = 4;
  float alpha = 4.0f;
  float scale() const { return alpha / static_cast<float>(rank); }
};

/// A [r, in] and B [out, r] (zero) for every conv and linear weight of theta.
ParamSet make_lora(const ParamSet& theta, const LoraConfig& cfg, num::Rng& rng);

/// Names of theta weights adapted by LoRA.
std::vector<std::string> lora_targets(const ParamSet& theta);

}  // namespace fddlab::models
