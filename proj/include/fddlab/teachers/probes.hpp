#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fddlab/numerics/tensor.hpp"

namespace fddlab::teachers {

/// Pixel-statistics classifier for generated frames. Each pixel is assigned
/// to the nearest palette entry at sprite (full) or background (half)
/// amplitude; the most frequent entry of each kind wins.
struct ColorGuess {
  int sprite = -1;      // -1 when no pixel is closest to a sprite color
  int background = -1;
};
ColorGuess classify_colors(const num::Tensor& frame);  // [3,H,W]

/// Pixels of `frame` ([3,H,W]) whose nearest palette entry is sprite color `color`.
std::vector<std::uint8_t> color_mask(const num::Tensor& frame, int color);

/// Displacement (dx, dy) from mask a to mask b maximising their overlap,
/// searched over |d| <= max_shift; ties go to the smaller displacement.
std::array<int, 2> estimate_shift(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int H,
                                  int W, int max_shift = 2);

/// True when every adjacent-frame displacement of the `color` sprite in
/// `video` ([F,3,H,W]) equals the one implied by velocity (dx, dy) from the
/// sprite's detected frame-0 position, bounces included.
bool motion_matches(const num::Tensor& video, int color, int dx, int dy);

}  // namespace fddlab::teachers
