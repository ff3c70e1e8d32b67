#pragma once

#include <functional>
#include <vector>

#include "fddlab/models/backbone.hpp"

namespace fddlab::eval {

using num::Tensor;

constexpr double kPsnrCap = 99.0;

/// PSNR in dB for images in [-1, 1] (peak-to-peak 2). Identical inputs and
/// anything above the cap report kPsnrCap. Symmetric in its arguments.
double psnr(const Tensor& a, const Tensor& b);
/// One value per row of [F,C,H,W] clips.
std::vector<double> per_frame_psnr(const Tensor& a, const Tensor& b);

/// Maps frames [N,C,H,W] to feature maps [N,K,h,w].
using FeatureFn = std::function<Tensor(const Tensor& frames)>;
/// The frozen backbone encoder (t = 1, no caption).
FeatureFn backbone_features(const models::ParamSet& theta, const models::BackboneConfig& cfg);

/// Feature maps without their outer ring, average-pooled over 2x2 cells;
/// one row of K * cells values per frame (channel-major).
struct Pooled {
  std::vector<std::vector<double>> rows;
  int channels = 0;
  int cells = 0;
};
Pooled pooled_features(const FeatureFn& features, const Tensor& frames);

/// Mean cosine between consecutive frames' pooled features, each centered
/// per channel over spatial cells. Requires F >= 2.
double temporal_consistency(const Tensor& video, const FeatureFn& features);

struct Directional {
  double value = 0.0;
  bool zero_delta = false;  // output or oracle equal the input in feature space
};
/// Cosine between f(output) - f(input) and f(oracle) - f(input), with the
/// pooled features of all frames concatenated.
Directional directional_agreement(const Tensor& input, const Tensor& output, const Tensor& oracle,
                                  const FeatureFn& features);

/// MSE between output and oracle over pixels where mask == 0. mask is
/// [F,1,H,W]; a clip with no unchanged pixels scores 0.
double unchanged_region_mse(const Tensor& output, const Tensor& oracle, const Tensor& mask);

}  // namespace fddlab::eval
