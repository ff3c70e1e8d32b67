#include "fddlab/teachers/probes.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <limits>

#include "fddlab/numerics/ops.hpp"
#include "fddlab/worldgen/world.hpp"

namespace fddlab::teachers {

using num::Tensor;

namespace {

// 0..5 sprite colors, 6..11 background colors.
std::vector<int> classes(const Tensor& frame) {
  const int H = frame.dim(1), W = frame.dim(2), n = H * W;
  const float* p = frame.ptr();
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::max();
    for (int k = 0; k < 2 * worldgen::kColors; ++k) {
      const auto c = k < worldgen::kColors ? worldgen::sprite_rgb(k) : worldgen::background_rgb(k - worldgen::kColors);
      double d = 0.0;
      for (int ch = 0; ch < 3; ++ch) d += (p[ch * n + i] - c[ch]) * (p[ch * n + i] - c[ch]);
      if (d < best) {
        best = d;
        out[i] = k;
      }
    }
  }
  return out;
}

}  // namespace

ColorGuess classify_colors(const Tensor& frame) {
  std::vector<int> count(2 * worldgen::kColors, 0);
  for (int k : classes(frame)) ++count[k];
  ColorGuess g;
  const auto mid = count.begin() + worldgen::kColors;
  if (*std::max_element(count.begin(), mid) > 0) g.sprite = static_cast<int>(std::max_element(count.begin(), mid) - count.begin());
  if (*std::max_element(mid, count.end()) > 0) g.background = static_cast<int>(std::max_element(mid, count.end()) - mid);
  return g;
}

std::vector<std::uint8_t> color_mask(const Tensor& frame, int color) {
  const auto k = classes(frame);
  std::vector<std::uint8_t> m(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) m[i] = k[i] == color;
  return m;
}

std::array<int, 2> estimate_shift(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int H,
                                  int W, int max_shift) {
  std::array<int, 2> best{0, 0};
  long best_score = -1;
  int best_norm = 0;
  for (int dy = -max_shift; dy <= max_shift; ++dy) {
    for (int dx = -max_shift; dx <= max_shift; ++dx) {
      long score = 0;
      for (int r = 0; r < H; ++r) {
        const int r0 = r - dy;
        if (r0 < 0 || r0 >= H) continue;
        for (int c = 0; c < W; ++c) {
          const int c0 = c - dx;
          if (c0 >= 0 && c0 < W) score += b[r * W + c] & a[r0 * W + c0];
        }
      }
      const int norm = std::abs(dx) + std::abs(dy);
      if (score > best_score || (score == best_score && norm < best_norm)) {
        best_score = score;
        best_norm = norm;
        best = {dx, dy};
      }
    }
  }
  return best;
}

bool motion_matches(const Tensor& video, int color, int dx, int dy) {
  const int F = video.dim(0), H = video.dim(2), W = video.dim(3);
  std::vector<std::vector<std::uint8_t>> masks;
  for (int f = 0; f < F; ++f) {
    masks.push_back(color_mask(num::reshape(num::slice(video, 0, f, 1), {3, H, W}), color));
    if (std::none_of(masks.back().begin(), masks.back().end(), [](std::uint8_t v) { return v != 0; })) return false;
  }
  worldgen::WorldSpec s;
  s.H = H;
  s.W = W;
  s.F = F;
  s.dx = dx;
  s.dy = dy;
  const int S = s.sprite_size();
  int x0 = W, y0 = H;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      if (masks[0][r * W + c]) {
        x0 = std::min(x0, c);
        y0 = std::min(y0, r);
      }
  s.x = std::clamp(x0, 0, W - S);
  s.y = std::clamp(y0, 0, H - S);
  for (int f = 0; f + 1 < F; ++f) {
    const auto p = worldgen::sprite_position(s, f), q = worldgen::sprite_position(s, f + 1);
    const auto d = estimate_shift(masks[f], masks[f + 1], H, W);
    if (d[0] != q[0] - p[0] || d[1] != q[1] - p[1]) return false;
  }
  return true;
}

}  // namespace fddlab::teachers
