#pragma once

#include <vector>

#include "fddlab/models/backbone.hpp"

namespace fddlab::fdd {

using models::ParamSet;
using num::Tensor;

struct DiscConfig {
  int width = 32;  // projected feature width
};

/// Edit discriminator heads: projections of candidate and input features,
/// an instruction embedding, one attention layer and an MLP head.
ParamSet make_edit_disc(const models::BackboneConfig& cfg, const DiscConfig& dcfg, num::Rng& rng);

/// Video discriminator heads: feature and caption projections, a temporal
/// attention layer applied per pixel and an MLP head.
ParamSet make_video_disc(const models::BackboneConfig& cfg, const DiscConfig& dcfg, num::Rng& rng);

/// One score per frame. `candidate` and `input` are [N,C,H,W] frames; the
/// instructions are per clip of `frames` rows. Features come from the
/// frozen feature network over theta.
Tensor edit_disc_scores(const ParamSet& disc, const ParamSet& theta, const models::BackboneConfig& cfg,
                        const Tensor& candidate, const Tensor& input,
                        const std::vector<std::vector<int>>& instructions, int frames);

/// One score per clip of `frames` rows.
Tensor video_disc_scores(const ParamSet& disc, const ParamSet& theta, const models::BackboneConfig& cfg,
                         const Tensor& video, const std::vector<std::vector<int>>& captions, int frames);

enum class GLossForm { Paper, StandardHinge };

/// E[max(0, 1 - real)] + E[max(0, 1 + fake)].
Tensor hinge_d_loss(const Tensor& real_scores, const Tensor& fake_scores);
/// Paper: -E[max(0, 1 + fake)]. StandardHinge: -E[fake].
Tensor hinge_g_loss(const Tensor& fake_scores, GLossForm form);

}  // namespace fddlab::fdd
