#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fddlab/numerics/rng.hpp"
#include "fddlab/numerics/tensor.hpp"

namespace fddlab::worldgen {

using num::Tensor;

enum class Shape { None = 0, Square, Circle, Triangle };
enum class Background { Solid = 0, Gradient };
enum class Texture { None = 0, Stripes, Checker };
enum class Task { Add = 0, Remove, Background, Texture, Local, Style, Global };

constexpr int kColors = 6;
constexpr int kTasks = 7;
const char* color_name(int c);
const char* to_string(Shape s);
const char* to_string(Task t);
Task parse_task(const std::string& name);

/// Sprite colors are the saturated palette; background colors are the same
/// hues at half amplitude, so sprite and background never coincide.
std::array<float, 3> sprite_rgb(int color);
std::array<float, 3> background_rgb(int color);

struct WorldSpec {
  int H = 16, W = 16, F = 4;
  Shape shape = Shape::Square;
  int color = 0;
  Background bg = Background::Solid;
  int bg_top = 1;     // solid color, or gradient top
  int bg_bottom = 2;  // gradient bottom
  int x = 0, y = 0;   // top-left at frame 0
  int dx = 0, dy = 0;
  Texture texture = Texture::None;
  Shape companion = Shape::None;
  int companion_color = 0;
  bool style = false;

  int sprite_size() const { return H * 3 / 8; }
  bool operator==(const WorldSpec&) const = default;
};

/// Throws std::invalid_argument for sprites that do not fit, colors out of
/// the palette, or velocities outside {-1, 0, 1}.
void validate(const WorldSpec& spec);
std::uint64_t spec_hash(const WorldSpec& spec);

/// Top-left of the main sprite at frame i (reflecting bounce).
std::array<int, 2> sprite_position(const WorldSpec& spec, int frame);
/// Spec describing the same scene from frame `a` onwards.
WorldSpec advance(const WorldSpec& spec, int a);
/// Horizontal offset of the companion sprite relative to the main sprite;
/// the companion wraps around the grid horizontally.
int companion_offset(const WorldSpec& spec);

/// Scene of F frames as [F,3,H,W] in [-1, 1]. Pure function of the spec.
Tensor render(const WorldSpec& spec);
/// Per-frame pixel masks [F,H,W] (1 inside) of the main and companion sprites
/// as visible in the render (the companion sits underneath the main sprite).
std::vector<std::uint8_t> sprite_mask(const WorldSpec& spec);
std::vector<std::uint8_t> companion_mask(const WorldSpec& spec);

/// Fixed global color mixing applied by the Style edit.
const std::array<std::array<float, 3>, 3>& style_matrix();

// Token vocabulary shared by captions and instructions. Each caption slot
// has its own token range.
namespace tok {
constexpr int kShape = 0;           // 4: none, square, circle, triangle
constexpr int kColor = 4;           // 6 sprite colors
constexpr int kBgKind = 10;         // 2
constexpr int kBgTop = 12;          // 6
constexpr int kBgBottom = 18;       // 6
constexpr int kDx = 24;             // 3
constexpr int kDy = 27;             // 3
constexpr int kTexture = 30;        // 3 (none unused in captions)
constexpr int kCompanion = 33;      // 3 shapes (square, circle, triangle)
constexpr int kCompanionColor = 36; // 6
constexpr int kStyle = 42;
constexpr int kTask = 43;           // 7
constexpr int kVocab = 64;
}  // namespace tok

std::vector<int> caption(const WorldSpec& spec);
/// Space-separated words, one per token, and the inverse.
std::string describe(const std::vector<int>& tokens);
std::vector<int> parse_tokens(const std::string& words);

/// Random base scene: one sprite, no texture, companion or style, sprite
/// fully inside the grid at frame 0.
WorldSpec sample_scene(int H, int W, int F, num::Rng& rng);

}  // namespace fddlab::worldgen
