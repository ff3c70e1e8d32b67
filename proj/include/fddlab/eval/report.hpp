#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fddlab/eval/metrics.hpp"
#include "fddlab/models/compose.hpp"
#include "fddlab/worldgen/dataset.hpp"

namespace fddlab::eval {

struct ItemMetrics {
  std::string item_id;
  std::string task;
  double edit_fidelity_db = 0.0;
  std::vector<double> frame_psnr;
  double temporal_consistency = 0.0;
  double directional_agreement = 0.0;
  bool directional_zero_delta = false;
  double unchanged_region_mse = 0.0;
};

struct RunMeta {
  std::string run;
  std::string config_hash = "-";
  std::uint64_t seed = 0;
  int iteration = 0;
  double train_seconds = 0.0;  // wall clock; kept out of report.csv, which must be reproducible
};

struct MetricsReport {
  RunMeta meta;
  std::vector<ItemMetrics> items;  // sorted by item_id
  double edit_fidelity_db = 0.0;
  double temporal_consistency = 0.0;
  double directional_agreement = 0.0;
  double unchanged_region_mse = 0.0;
  int zero_delta_items = 0;
};

/// Sorts items by id and recomputes the aggregates as arithmetic means.
void finalize(MetricsReport& report);

/// Metrics of one edited clip against the item's oracle and mask.
ItemMetrics score_item(const worldgen::DataItem& item, const Tensor& output, const FeatureFn& features);

/// Produces the edited clip [F,C,H,W] for an eval item.
using EditFn = std::function<Tensor(const worldgen::DataItem& item, num::Rng& rng)>;

struct EvalConfig {
  int steps = 8;               // uniform DDIM steps of the video model
  int first_frame_steps = 16;  // psi steps for the conditioning first frame
  std::uint64_t seed = 0;
  int grid_items = 8;          // items dumped as input | output | oracle PPMs
};

/// Editor for Eta or Phi: psi edits frame 0, the video model then samples the
/// clip conditioned on it (when first-frame conditioning is on).
EditFn model_editor(models::Variant v, const models::ModelSet& m, const diffusion::NoiseSchedule& sched,
                    const EvalConfig& cfg);
/// Returns the oracle itself; a self-comparison baseline.
EditFn oracle_editor();

/// Edits and scores every item. Each item draws from Rng(seed) split by its
/// id, so results do not depend on item order. Writes report.csv and
/// samples/<id>.ppm under out_dir when set. Items without oracle or mask
/// are rejected.
MetricsReport evaluate_run(const EditFn& edit, const worldgen::Subset& eval_set, const FeatureFn& features,
                           const EvalConfig& cfg, const RunMeta& meta, const std::filesystem::path& out_dir = {});

/// report.csv: a "# key=value ..." metadata line, then the header
/// item_id,task,edit_fidelity_db,temporal_consistency,directional_agreement,unchanged_region_mse
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report_csv(const std::filesystem::path& path);

struct MetricComparison {
  std::string metric;
  double mean_a = 0.0, mean_b = 0.0;
  double delta = 0.0;     // mean_b - mean_a
  double win_rate = 0.0;  // share of items where b is better; ties count half
  int items = 0;
};
/// Joins two reports on item_id. Lower is better for unchanged_region_mse,
/// higher for the rest.
std::vector<MetricComparison> compare_reports(const MetricsReport& a, const MetricsReport& b);
void write_comparison_csv(const std::filesystem::path& path, const std::vector<MetricComparison>& rows);

}  // namespace fddlab::eval
