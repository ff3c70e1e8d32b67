#include "fddlab/worldgen/instructions.hpp"

#include <atomic>
#include <stdexcept>

#include "fddlab/errors.hpp"

namespace fddlab::worldgen {

namespace {

std::atomic<std::uint64_t> g_oracle_calls{0};

int other_color(int current, num::Rng& rng) { return (current + rng.uniform_int(1, kColors - 1)) % kColors; }

}  // namespace

std::string inapplicable_reason(const WorldSpec& s, Task task) {
  const bool sprite = s.shape != Shape::None;
  switch (task) {
    case Task::Add:
      if (!sprite) return "add needs a sprite to accompany";
      if (s.companion != Shape::None) return "scene already has a companion sprite";
      return "";
    case Task::Remove: return sprite ? "" : "remove needs a sprite present";
    case Task::Background: return "";
    case Task::Texture:
      if (!sprite) return "texture needs a sprite";
      if (s.texture != Texture::None) return "sprite is already textured";
      return "";
    case Task::Local: return sprite ? "" : "local needs a sprite";
    case Task::Style: return s.style ? "scene is already styled" : "";
    case Task::Global: return sprite ? "" : "global needs a sprite";
  }
  return "unknown task";
}

std::vector<Task> applicable_tasks(const WorldSpec& s) {
  std::vector<Task> out;
  for (int t = 0; t < kTasks; ++t) {
    if (inapplicable_reason(s, static_cast<Task>(t)).empty()) out.push_back(static_cast<Task>(t));
  }
  return out;
}

std::vector<int> instruction_tokens(const InstructionRecord& r) {
  std::vector<int> t{tok::kTask + static_cast<int>(r.task)};
  switch (r.task) {
    case Task::Add:
      t.push_back(tok::kCompanion + static_cast<int>(r.add_shape) - 1);
      t.push_back(tok::kCompanionColor + r.add_color);
      break;
    case Task::Remove: break;
    case Task::Background: t.push_back(tok::kBgTop + r.bg_color); break;
    case Task::Texture: t.push_back(tok::kTexture + static_cast<int>(r.texture)); break;
    case Task::Local: t.push_back(tok::kColor + r.color); break;
    case Task::Style: t.push_back(tok::kStyle); break;
    case Task::Global:
      t.push_back(tok::kColor + r.color);
      t.push_back(tok::kBgTop + r.bg_color);
      break;
  }
  return t;
}

InstructionRecord instruction_from_tokens(const std::vector<int>& t) {
  auto bad = [&](const std::string& why) { throw std::invalid_argument("instruction tokens: " + why); };
  if (t.empty() || t[0] < tok::kTask || t[0] >= tok::kTask + kTasks) bad("first token must be a task label");
  InstructionRecord r;
  r.task = static_cast<Task>(t[0] - tok::kTask);
  auto in = [](int v, int base, int n) { return v >= base && v < base + n; };
  const std::size_t want = r.task == Task::Remove ? 1 : (r.task == Task::Add || r.task == Task::Global ? 3 : 2);
  if (t.size() != want) bad(std::string(to_string(r.task)) + " takes " + std::to_string(want - 1) + " parameters");
  switch (r.task) {
    case Task::Add:
      if (!in(t[1], tok::kCompanion, 3) || !in(t[2], tok::kCompanionColor, kColors)) bad("add needs shape and color");
      r.add_shape = static_cast<Shape>(t[1] - tok::kCompanion + 1);
      r.add_color = t[2] - tok::kCompanionColor;
      break;
    case Task::Remove: break;
    case Task::Background:
      if (!in(t[1], tok::kBgTop, kColors)) bad("background needs a background color");
      r.bg_color = t[1] - tok::kBgTop;
      break;
    case Task::Texture:
      if (!in(t[1], tok::kTexture + 1, 2)) bad("texture needs stripes or checker");
      r.texture = static_cast<Texture>(t[1] - tok::kTexture);
      break;
    case Task::Local:
      if (!in(t[1], tok::kColor, kColors)) bad("local needs a color");
      r.color = t[1] - tok::kColor;
      break;
    case Task::Style:
      if (t[1] != tok::kStyle) bad("style takes the style token");
      break;
    case Task::Global:
      if (!in(t[1], tok::kColor, kColors) || !in(t[2], tok::kBgTop, kColors)) bad("global needs two colors");
      r.color = t[1] - tok::kColor;
      r.bg_color = t[2] - tok::kBgTop;
      break;
  }
  r.c_instruct = t;
  return r;
}

WorldSpec apply_instruction(const WorldSpec& s, const InstructionRecord& r) {
  if (auto why = inapplicable_reason(s, r.task); !why.empty()) throw std::invalid_argument(why);
  WorldSpec e = s;
  switch (r.task) {
    case Task::Add:
      e.companion = r.add_shape;
      e.companion_color = r.add_color;
      break;
    case Task::Remove:
      e.shape = Shape::None;
      e.texture = Texture::None;
      e.companion = Shape::None;
      break;
    case Task::Background:
      e.bg = Background::Solid;
      e.bg_top = e.bg_bottom = r.bg_color;
      break;
    case Task::Texture: e.texture = r.texture; break;
    case Task::Local: e.color = r.color; break;
    case Task::Style: e.style = true; break;
    case Task::Global:
      e.color = r.color;
      e.bg = Background::Solid;
      e.bg_top = e.bg_bottom = r.bg_color;
      break;
  }
  return e;
}

InstructionRecord sample_instruction(const WorldSpec& s, Task task, num::Rng& rng) {
  if (auto why = inapplicable_reason(s, task); !why.empty()) throw std::invalid_argument(why);
  InstructionRecord r;
  r.task = task;
  const int solid = s.bg == Background::Solid ? s.bg_top : -1;
  auto new_bg = [&] { return solid < 0 ? rng.uniform_int(0, kColors - 1) : other_color(solid, rng); };
  switch (task) {
    case Task::Add:
      r.add_shape = static_cast<Shape>(rng.uniform_int(1, 3));
      r.add_color = rng.uniform_int(0, kColors - 1);
      break;
    case Task::Remove: break;
    case Task::Background: r.bg_color = new_bg(); break;
    case Task::Texture: r.texture = rng.uniform() < 0.5 ? Texture::Stripes : Texture::Checker; break;
    case Task::Local: r.color = other_color(s.color, rng); break;
    case Task::Style: break;
    case Task::Global:
      r.color = other_color(s.color, rng);
      r.bg_color = new_bg();
      break;
  }
  r.c_instruct = instruction_tokens(r);
  r.c_out = caption(apply_instruction(s, r));
  return r;
}

InstructionRecord sample_any_instruction(const WorldSpec& s, num::Rng& rng) {
  const auto tasks = applicable_tasks(s);
  if (tasks.empty()) throw std::invalid_argument("no applicable task");
  return sample_instruction(s, tasks[rng.uniform_int(0, static_cast<int>(tasks.size()) - 1)], rng);
}

bool full_frame_task(Task t) { return t == Task::Style || t == Task::Global; }

std::vector<std::uint8_t> change_mask(const WorldSpec& s, const InstructionRecord& r) {
  const std::size_t n = static_cast<std::size_t>(s.F) * s.H * s.W;
  switch (r.task) {
    case Task::Add:
      return s.shape == Shape::None || s.companion != Shape::None ? std::vector<std::uint8_t>(n, 0)
                                                                  : companion_mask(apply_instruction(s, r));
    case Task::Remove: {
      auto m = sprite_mask(s);
      const auto c = companion_mask(s);
      for (std::size_t i = 0; i < n; ++i) m[i] |= c[i];
      return m;
    }
    case Task::Background: {
      auto m = sprite_mask(s);
      const auto c = companion_mask(s);
      for (std::size_t i = 0; i < n; ++i) m[i] = !(m[i] | c[i]);
      return m;
    }
    case Task::Texture:
    case Task::Local: return sprite_mask(s);
    case Task::Style:
    case Task::Global: return std::vector<std::uint8_t>(n, 1);
  }
  return std::vector<std::uint8_t>(n, 0);
}

Tensor oracle_edit(const Tensor& video, const WorldSpec& s, const InstructionRecord& r) {
  ++g_oracle_calls;
  validate(s);
  if (video.shape() != num::Shape{s.F, 3, s.H, s.W}) {
    throw ShapeError("oracle_edit: video " + num::to_string(video.shape()) + " does not match the spec");
  }
  // Edits that do not apply to this scene leave it unchanged.
  if (!inapplicable_reason(s, r.task).empty()) return video.clone();
  const Tensor edited = render(apply_instruction(s, r));
  const auto mask = change_mask(s, r);
  Tensor out = video.clone();
  float* o = out.mutable_data().data();
  const float* e = edited.ptr();
  const std::size_t plane = static_cast<std::size_t>(s.H) * s.W;
  for (int f = 0; f < s.F; ++f) {
    for (int k = 0; k < 3; ++k) {
      for (std::size_t p = 0; p < plane; ++p) {
        if (mask[f * plane + p]) o[(f * 3 + k) * plane + p] = e[(f * 3 + k) * plane + p];
      }
    }
  }
  out.set_requires_grad(false);
  return out;
}

std::uint64_t oracle_calls() { return g_oracle_calls.load(); }

}  // namespace fddlab::worldgen
