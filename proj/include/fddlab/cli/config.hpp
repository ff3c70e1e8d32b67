#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fddlab/diffusion/schedule.hpp"
#include "fddlab/eval/report.hpp"
#include "fddlab/fdd/fdd.hpp"
#include "fddlab/teachers/teachers.hpp"

namespace fddlab::cli {

struct RunConfig {
  worldgen::DatasetConfig data;
  int T = 64;
  diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::Linear;
  bool zero_terminal = true;
  models::BackboneConfig backbone;
  models::EditAdapterConfig edit_adapter;
  models::VideoAdapterConfig video_adapter;
  models::LoraConfig lora;
  teachers::PretrainConfig teacher_backbone, teacher_edit, teacher_video;
  fdd::FddConfig fdd;
  eval::EvalConfig eval;
  std::uint64_t seed = 0;

  RunConfig();
};

/// One documented key of the flat config file.
struct KeyInfo {
  std::string key;
  std::string doc;
};
std::vector<KeyInfo> config_keys();

/// Applies `key = value` lines (UTF-8, '#' comments, blank lines allowed).
/// Unknown keys, repeated keys and malformed values raise ConfigError with
/// the 1-based line number.
void apply_config_text(RunConfig& cfg, const std::string& text);
/// Missing files raise MissingDependency.
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, in documentation order.
std::string resolved_text(const RunConfig& cfg);
/// 16 hex digits of FNV-1a over resolved_text.
std::string config_hash(const RunConfig& cfg);
/// Writes config.resolved.txt and config.hash into dir.
void stamp(const std::filesystem::path& dir, const RunConfig& cfg);

diffusion::NoiseSchedule make_schedule(const RunConfig& cfg);

}  // namespace fddlab::cli
