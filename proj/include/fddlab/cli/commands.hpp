#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fddlab/cli/config.hpp"

namespace fddlab::cli {

/// Artifact directories under --out.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path stage(const std::string& name) const { return root / name; }  // backbone, edit, video
  std::filesystem::path ckpt(const std::string& stage_name) const { return root / stage_name / "ckpt"; }
  std::filesystem::path fdd(const std::string& preset) const { return root / "fdd" / preset; }
  std::filesystem::path pool() const { return root / "fdd" / "pool"; }
  std::filesystem::path eval(const std::string& run) const { return root / "eval" / run; }
};

// Every command stamps its artifact directory with the resolved config.
// Missing prerequisites raise MissingDependency; divergence NumericalError.

void gen_data(const RunConfig& cfg, const Layout& out, std::ostream& log);
void pretrain_backbone(const RunConfig& cfg, const Layout& out, std::ostream& log);
void train_edit(const RunConfig& cfg, const Layout& out, std::ostream& log);
void train_video(const RunConfig& cfg, const Layout& out, std::ostream& log);

/// Teacher set: theta and theta_edit from edit/ckpt, theta_video from
/// video/ckpt. Both stages must share the same theta.
models::LoadedModel load_teachers(const Layout& out);

/// FDD with an ablation preset ("full" for fdd-align). no_alignment writes
/// the plug-and-play student with zero iterations.
void align(const RunConfig& cfg, const Layout& out, fdd::Preset preset, std::ostream& log);

/// Evaluates fdd/<run>/ckpt (phi; eta for no_alignment) on the eval set.
eval::MetricsReport evaluate(const RunConfig& cfg, const Layout& out, const std::string& run, std::ostream& log);

/// Joins eval/<a>/report.csv and eval/<b>/report.csv (or two report paths)
/// and writes compare_<a>_vs_<b>.csv under eval/.
std::vector<eval::MetricComparison> compare(const Layout& out, const std::string& a, const std::string& b,
                                            std::ostream& log);

/// Edits a [F,C,H,W] FDT1 clip with the student of fdd/<run> and writes one
/// PPM per frame plus an input | output strip into dest.
void sample(const RunConfig& cfg, const Layout& out, const std::string& run, const std::filesystem::path& video,
            const std::string& instruction, const std::string& caption, const std::filesystem::path& dest,
            std::ostream& log);

/// Training-free invariant checks, one PASS/FAIL line each. True if all pass.
bool selftest(std::ostream& log);

}  // namespace fddlab::cli
