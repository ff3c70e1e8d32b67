#pragma once

#include <cstdint>
#include <vector>

#include "fddlab/worldgen/world.hpp"

namespace fddlab::worldgen {

struct InstructionRecord {
  Task task = Task::Local;
  int color = -1;     // Local, Global: new sprite color
  int bg_color = -1;  // Background, Global: new solid background
  Texture texture = Texture::None;
  Shape add_shape = Shape::None;
  int add_color = -1;
  std::vector<int> c_instruct;  // task token first
  std::vector<int> c_out;       // caption of the edited scene
};

/// Empty string when applicable, otherwise the reason.
std::string inapplicable_reason(const WorldSpec& spec, Task task);
std::vector<Task> applicable_tasks(const WorldSpec& spec);

/// Parameters drawn uniformly from the valid values for the task.
/// Throws std::invalid_argument for inapplicable tasks.
InstructionRecord sample_instruction(const WorldSpec& spec, Task task, num::Rng& rng);
/// Task drawn uniformly from the applicable ones.
InstructionRecord sample_any_instruction(const WorldSpec& spec, num::Rng& rng);

/// Tokens from an instruction record's parameters.
std::vector<int> instruction_tokens(const InstructionRecord& r);
/// Inverse of instruction_tokens (c_out is left empty).
InstructionRecord instruction_from_tokens(const std::vector<int>& tokens);

/// Scene after the edit.
WorldSpec apply_instruction(const WorldSpec& spec, const InstructionRecord& r);

/// Pixels [F,H,W] the edit is allowed to change.
std::vector<std::uint8_t> change_mask(const WorldSpec& spec, const InstructionRecord& r);
/// True when the change region is the whole frame (Style, Global).
bool full_frame_task(Task t);

/// Analytic edit of `video` (a render of `spec`): pixels inside the change
/// mask come from the edited scene, all others are copied from the input.
Tensor oracle_edit(const Tensor& video, const WorldSpec& spec, const InstructionRecord& r);

/// Number of oracle_edit calls made by this process.
std::uint64_t oracle_calls();

}  // namespace fddlab::worldgen
