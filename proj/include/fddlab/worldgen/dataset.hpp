#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fddlab/worldgen/instructions.hpp"

namespace fddlab::worldgen {

struct DatasetConfig {
  int H = 16, W = 16, F = 4;
  int n_backbone = 2048;
  int n_edit = 1024;
  int n_video = 512;
  int n_fdd = 512;
  int n_eval = 128;
  std::uint64_t seed = 0;
};

/// Item seeds are seed + offset + index; each subset owns a disjoint range.
struct SeedRange {
  std::string subset;
  std::uint64_t begin = 0, end = 0;
};
std::vector<SeedRange> seed_ranges(const DatasetConfig& cfg);
/// Throws std::invalid_argument when the eval range meets a training range.
void check_seed_ranges(const std::vector<SeedRange>& ranges);

/// One manifest row. `files` maps a field (frame, c_img, target, video,
/// c_vid, oracle, mask) to its FDT1 file.
struct DataItem {
  std::string id;
  std::string task = "-";
  std::vector<int> caption;      // c_out (or the scene caption)
  std::vector<int> instruction;  // c_instruct, empty when absent
  std::uint64_t scene_hash = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> files;
  std::map<std::string, num::Tensor> tensors;
};

struct Subset {
  std::string name;
  std::vector<DataItem> items;
};

/// Hash of the scene irrespective of clip length.
std::uint64_t scene_hash(const WorldSpec& spec);

/// Writes backbone/, edit/, video/, fdd/ and eval/ under `root`, each with a
/// manifest.tsv and FDT1 tensors. Eval scenes never share a scene hash with
/// any training scene.
void build_datasets(const std::filesystem::path& root, const DatasetConfig& cfg);

/// Reads a subset. Missing directories raise MissingDependency.
Subset load_subset(const std::filesystem::path& root, const std::string& name);
/// The unsupervised triplets: only c_out, c_instruct and c_vid are read;
/// any other file in the manifest is a schema violation.
Subset load_fdd_triplets(const std::filesystem::path& root);

/// Rows of `field` for the given items, concatenated along axis 0.
num::Tensor stack_field(const Subset& s, const std::vector<int>& idx, const std::string& field);

void write_manifest(const std::filesystem::path& dir, const std::vector<DataItem>& items);

// PPM (P6) output for inspection. Images are [3,H,W] in [-1,1].
void write_ppm(const std::filesystem::path& path, const num::Tensor& image, int zoom = 4);
/// rows x cols grid of [3,H,W] tiles with a one-pixel gap.
num::Tensor tile_grid(const std::vector<std::vector<num::Tensor>>& tiles);

}  // namespace fddlab::worldgen
