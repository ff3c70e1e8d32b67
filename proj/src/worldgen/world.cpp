#include "fddlab/worldgen/world.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fddlab::worldgen {

namespace {

constexpr std::array<std::array<float, 3>, kColors> kPalette{{
    {1, -1, -1},  // red
    {-1, 1, -1},  // green
    {-1, -1, 1},  // blue
    {1, 1, -1},   // yellow
    {1, -1, 1},   // magenta
    {-1, 1, 1},   // cyan
}};
constexpr const char* kColorNames[kColors] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
constexpr const char* kTaskNames[kTasks] = {"add", "remove", "background", "texture", "local", "style", "global"};

int reflect(int q, int L) {
  if (L <= 0) return 0;
  const int period = 2 * L;
  const int m = ((q % period) + period) % period;
  return m <= L ? m : period - m;
}

bool inside(Shape shape, int u, int v, int S) {
  const double c = (S - 1) / 2.0;
  switch (shape) {
    case Shape::Square: return true;
    case Shape::Circle: return (u - c) * (u - c) + (v - c) * (v - c) <= (S / 2.0) * (S / 2.0);
    case Shape::Triangle: return std::fabs(u - c) <= (v + 1) / 2.0;
    case Shape::None: return false;
  }
  return false;
}

std::vector<std::string> word_table() {
  std::vector<std::string> w(tok::kVocab);
  const char* shapes[] = {"none", "square", "circle", "triangle"};
  for (int i = 0; i < 4; ++i) w[tok::kShape + i] = shapes[i];
  for (int c = 0; c < kColors; ++c) {
    w[tok::kColor + c] = kColorNames[c];
    w[tok::kBgTop + c] = std::string("bg-") + kColorNames[c];
    w[tok::kBgBottom + c] = std::string("bg2-") + kColorNames[c];
    w[tok::kCompanionColor + c] = std::string("with-") + kColorNames[c];
  }
  w[tok::kBgKind + 0] = "solid";
  w[tok::kBgKind + 1] = "gradient";
  const char* dxs[] = {"left", "still-x", "right"};
  const char* dys[] = {"up", "still-y", "down"};
  for (int i = 0; i < 3; ++i) {
    w[tok::kDx + i] = dxs[i];
    w[tok::kDy + i] = dys[i];
  }
  w[tok::kTexture + 0] = "plain";
  w[tok::kTexture + 1] = "stripes";
  w[tok::kTexture + 2] = "checker";
  w[tok::kCompanion + 0] = "with-square";
  w[tok::kCompanion + 1] = "with-circle";
  w[tok::kCompanion + 2] = "with-triangle";
  w[tok::kStyle] = "styled";
  for (int t = 0; t < kTasks; ++t) w[tok::kTask + t] = kTaskNames[t];
  for (int i = 0; i < tok::kVocab; ++i) {
    if (w[i].empty()) w[i] = "<" + std::to_string(i) + ">";
  }
  return w;
}

}  // namespace

const char* color_name(int c) { return kColorNames[c]; }

const char* to_string(Shape s) {
  switch (s) {
    case Shape::None: return "none";
    case Shape::Square: return "square";
    case Shape::Circle: return "circle";
    case Shape::Triangle: return "triangle";
  }
  return "?";
}

const char* to_string(Task t) { return kTaskNames[static_cast<int>(t)]; }

Task parse_task(const std::string& name) {
  for (int t = 0; t < kTasks; ++t) {
    if (name == kTaskNames[t]) return static_cast<Task>(t);
  }
  throw std::invalid_argument("unknown task '" + name + "'");
}

std::array<float, 3> sprite_rgb(int color) { return kPalette.at(color); }

std::array<float, 3> background_rgb(int color) {
  auto c = kPalette.at(color);
  for (float& v : c) v *= 0.5f;
  return c;
}

void validate(const WorldSpec& s) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("world spec: " + m); };
  if (s.H < 8 || s.W < 8 || s.F < 1) fail("grid must be at least 8x8 with one frame");
  const int S = s.sprite_size();
  if (S > s.W || S > s.H) fail("sprite larger than grid");
  if (s.shape != Shape::None && (s.x < 0 || s.y < 0 || s.x + S > s.W || s.y + S > s.H)) {
    fail("sprite outside grid at frame 0");
  }
  auto color_ok = [](int c) { return c >= 0 && c < kColors; };
  if (!color_ok(s.color) || !color_ok(s.bg_top) || !color_ok(s.bg_bottom) || !color_ok(s.companion_color)) {
    fail("color outside palette");
  }
  if (s.dx < -1 || s.dx > 1 || s.dy < -1 || s.dy > 1) fail("velocity components must be in {-1,0,1}");
}

std::uint64_t spec_hash(const WorldSpec& s) {
  const int fields[] = {s.H, s.W, s.F, int(s.shape), s.color, int(s.bg), s.bg_top,
                        s.bg == Background::Gradient ? s.bg_bottom : -1, s.x, s.y, s.dx, s.dy, int(s.texture),
                        int(s.companion), s.companion == Shape::None ? -1 : s.companion_color, s.style ? 1 : 0};
  std::uint64_t h = 1469598103934665603ull;
  for (int f : fields) h = num::Rng::mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(f)));
  return h;
}

std::array<int, 2> sprite_position(const WorldSpec& s, int frame) {
  const int S = s.sprite_size();
  return {reflect(s.x + s.dx * frame, s.W - S), reflect(s.y + s.dy * frame, s.H - S)};
}

WorldSpec advance(const WorldSpec& s, int a) {
  if (a < 0 || a >= s.F) throw std::invalid_argument("advance: frame outside clip");
  WorldSpec out = s;
  const auto p = sprite_position(s, a), q = sprite_position(s, a + 1);
  out.x = p[0];
  out.y = p[1];
  const int S = s.sprite_size();
  if (s.dx != 0 && s.W > S) out.dx = q[0] > p[0] ? 1 : -1;
  if (s.dy != 0 && s.H > S) out.dy = q[1] > p[1] ? 1 : -1;
  out.F = s.F - a;
  return out;
}

int companion_offset(const WorldSpec& s) { return s.W / 2; }

const std::array<std::array<float, 3>, 3>& style_matrix() {
  static const std::array<std::array<float, 3>, 3> m{{{0.6f, 0.3f, 0.1f}, {0.1f, 0.6f, 0.3f}, {0.3f, 0.1f, 0.6f}}};
  return m;
}

namespace {

// Per-pixel layer id: 0 background, 1 companion, 2 main sprite.
std::vector<std::uint8_t> layers(const WorldSpec& s) {
  const int S = s.sprite_size();
  std::vector<std::uint8_t> id(static_cast<std::size_t>(s.F) * s.H * s.W, 0);
  for (int f = 0; f < s.F; ++f) {
    const auto p = sprite_position(s, f);
    std::uint8_t* plane = id.data() + static_cast<std::size_t>(f) * s.H * s.W;
    if (s.companion != Shape::None && s.shape != Shape::None) {
      for (int v = 0; v < S; ++v) {
        for (int u = 0; u < S; ++u) {
          if (!inside(s.companion, u, v, S)) continue;
          const int r = p[1] + v, c = ((p[0] + companion_offset(s) + u) % s.W + s.W) % s.W;
          if (r >= 0 && r < s.H) plane[r * s.W + c] = 1;
        }
      }
    }
    if (s.shape != Shape::None) {
      for (int v = 0; v < S; ++v) {
        for (int u = 0; u < S; ++u) {
          if (inside(s.shape, u, v, S)) plane[(p[1] + v) * s.W + p[0] + u] = 2;
        }
      }
    }
  }
  return id;
}

}  // namespace

Tensor render(const WorldSpec& s) {
  validate(s);
  const auto id = layers(s);
  Tensor out = Tensor::zeros({s.F, 3, s.H, s.W});
  float* o = out.mutable_data().data();
  const auto top = background_rgb(s.bg_top), bottom = background_rgb(s.bg_bottom);
  const auto fg = sprite_rgb(s.color), comp = sprite_rgb(s.companion_color);
  const auto& m = style_matrix();
  const std::size_t plane = static_cast<std::size_t>(s.H) * s.W;
  for (int f = 0; f < s.F; ++f) {
    const auto p = sprite_position(s, f);
    for (int r = 0; r < s.H; ++r) {
      for (int c = 0; c < s.W; ++c) {
        std::array<float, 3> px{};
        switch (id[f * plane + r * s.W + c]) {
          case 0:
            for (int k = 0; k < 3; ++k) {
              px[k] = s.bg == Background::Solid ? top[k]
                                                : top[k] + (bottom[k] - top[k]) * static_cast<float>(r) / (s.H - 1);
            }
            break;
          case 1: px = comp; break;
          default: {
            px = fg;
            const int u = c - p[0], v = r - p[1];
            const bool alt = s.texture == Texture::Stripes   ? v % 2 == 1
                             : s.texture == Texture::Checker ? (u + v) % 2 == 1
                                                             : false;
            if (s.texture != Texture::None) {
              for (int k = 0; k < 3; ++k) px[k] = alt ? (px[k] + 1.0f) * 0.5f : px[k] * 0.5f;
            }
          }
        }
        if (s.style) {
          const auto in = px;
          for (int k = 0; k < 3; ++k) px[k] = m[k][0] * in[0] + m[k][1] * in[1] + m[k][2] * in[2];
        }
        for (int k = 0; k < 3; ++k) o[((f * 3 + k) * s.H + r) * s.W + c] = px[k];
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> sprite_mask(const WorldSpec& s) {
  auto id = layers(s);
  for (auto& v : id) v = v == 2;
  return id;
}

std::vector<std::uint8_t> companion_mask(const WorldSpec& s) {
  auto id = layers(s);
  for (auto& v : id) v = v == 1;
  return id;
}

std::vector<int> caption(const WorldSpec& s) {
  std::vector<int> t{tok::kShape + static_cast<int>(s.shape)};
  if (s.shape != Shape::None) t.push_back(tok::kColor + s.color);
  t.push_back(tok::kBgKind + static_cast<int>(s.bg));
  t.push_back(tok::kBgTop + s.bg_top);
  if (s.bg == Background::Gradient) t.push_back(tok::kBgBottom + s.bg_bottom);
  if (s.shape != Shape::None) {
    t.push_back(tok::kDx + s.dx + 1);
    t.push_back(tok::kDy + s.dy + 1);
  }
  if (s.texture != Texture::None) t.push_back(tok::kTexture + static_cast<int>(s.texture));
  if (s.companion != Shape::None) {
    t.push_back(tok::kCompanion + static_cast<int>(s.companion) - 1);
    t.push_back(tok::kCompanionColor + s.companion_color);
  }
  if (s.style) t.push_back(tok::kStyle);
  return t;
}

std::string describe(const std::vector<int>& tokens) {
  static const auto words = word_table();
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += t >= 0 && t < tok::kVocab ? words[t] : "<?>";
  }
  return out;
}

std::vector<int> parse_tokens(const std::string& text) {
  static const auto words = word_table();
  std::istringstream in(text);
  std::vector<int> out;
  std::string w;
  while (in >> w) {
    int found = -1;
    for (int i = 0; i < tok::kVocab; ++i) {
      if (words[i] == w) found = i;
    }
    if (found < 0) throw std::invalid_argument("unknown word '" + w + "'");
    out.push_back(found);
  }
  return out;
}

WorldSpec sample_scene(int H, int W, int F, num::Rng& rng) {
  WorldSpec s;
  s.H = H;
  s.W = W;
  s.F = F;
  s.shape = static_cast<Shape>(rng.uniform_int(1, 3));
  s.color = rng.uniform_int(0, kColors - 1);
  s.bg = rng.uniform() < 0.5 ? Background::Solid : Background::Gradient;
  s.bg_top = rng.uniform_int(0, kColors - 1);
  s.bg_bottom = (s.bg_top + rng.uniform_int(1, kColors - 1)) % kColors;
  if (s.bg == Background::Solid) s.bg_bottom = s.bg_top;
  const int S = s.sprite_size();
  s.x = rng.uniform_int(0, W - S);
  s.y = rng.uniform_int(0, H - S);
  s.dx = rng.uniform_int(-1, 1);
  s.dy = rng.uniform_int(-1, 1);
  validate(s);
  return s;
}

}  // namespace fddlab::worldgen
