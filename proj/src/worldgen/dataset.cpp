#include "fddlab/worldgen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/fdt1.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/parallel.hpp"

namespace fddlab::worldgen {

namespace fs = std::filesystem;
using num::Tensor;

namespace {

constexpr std::uint64_t kRangeStride = 1ull << 24;

std::string join(const std::vector<int>& v) {
  std::string s;
  for (int t : v) s += (s.empty() ? "" : " ") + std::to_string(t);
  return s.empty() ? "-" : s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  if (s == "-") return out;
  std::istringstream in(s);
  int v;
  while (in >> v) out.push_back(v);
  return out;
}

std::string item_id(const std::string& subset, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", subset.c_str(), i);
  return buf;
}

Tensor mask_tensor(const std::vector<std::uint8_t>& m, const WorldSpec& s) {
  std::vector<float> v(m.begin(), m.end());
  return Tensor::from({s.F, 1, s.H, s.W}, std::move(v));
}

// Half of the backbone and video scenes are shown in an edited state so the
// teachers see every caption slot.
WorldSpec training_scene(int H, int W, int F, num::Rng& rng) {
  WorldSpec s = sample_scene(H, W, F, rng);
  if (rng.uniform() < 0.5) s = apply_instruction(s, sample_any_instruction(s, rng));
  return s;
}

}  // namespace

std::uint64_t scene_hash(const WorldSpec& spec) {
  WorldSpec s = spec;
  s.F = 1;
  return spec_hash(s);
}

std::vector<SeedRange> seed_ranges(const DatasetConfig& c) {
  auto r = [&](const char* name, int slot, int n) {
    return SeedRange{name, c.seed + slot * kRangeStride, c.seed + slot * kRangeStride + static_cast<std::uint64_t>(n)};
  };
  return {r("backbone", 0, c.n_backbone), r("edit", 1, c.n_edit), r("video", 2, c.n_video), r("fdd", 3, c.n_fdd),
          r("eval", 8, c.n_eval)};
}

void check_seed_ranges(const std::vector<SeedRange>& ranges) {
  for (const auto& e : ranges) {
    if (e.subset != "eval") continue;
    for (const auto& t : ranges) {
      if (t.subset == "eval") continue;
      if (e.begin < t.end && t.begin < e.end) {
        throw std::invalid_argument("eval seed range [" + std::to_string(e.begin) + "," + std::to_string(e.end) +
                                    ") overlaps " + t.subset + " [" + std::to_string(t.begin) + "," +
                                    std::to_string(t.end) + ")");
      }
    }
  }
}

Tensor stack_field(const Subset& s, const std::vector<int>& idx, const std::string& field) {
  std::vector<Tensor> rows;
  rows.reserve(idx.size());
  for (int i : idx) {
    const DataItem& it = s.items.at(i);
    auto f = it.tensors.find(field);
    if (f == it.tensors.end()) throw std::out_of_range(s.name + "/" + it.id + ": no field '" + field + "'");
    rows.push_back(f->second);
  }
  return num::concat(std::span<const Tensor>(rows), 0);
}

void write_manifest(const fs::path& dir, const std::vector<DataItem>& items) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.tsv");
  out << "id\ttask\tcaption\tinstruction\tscene_hash\tseed\tfiles\n";
  for (const auto& it : items) {
    std::string files;
    for (const auto& [k, f] : it.files) files += (files.empty() ? "" : ",") + k + "=" + f;
    out << it.id << '\t' << it.task << '\t' << join(it.caption) << '\t' << join(it.instruction) << '\t'
        << it.scene_hash << '\t' << it.seed << '\t' << files << '\n';
    for (const auto& [k, t] : it.tensors) num::write_fdt1(dir / it.files.at(k), t);
  }
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.tsv").string());
}

void build_datasets(const fs::path& root, const DatasetConfig& cfg) {
  const auto ranges = seed_ranges(cfg);
  check_seed_ranges(ranges);
  for (const auto& r : ranges) {
    if (r.end - r.begin > kRangeStride) throw std::invalid_argument(r.subset + ": too many items for its seed range");
  }
  std::set<std::uint64_t> train_hashes;
  auto gen = [&](const SeedRange& range, auto&& make) {
    const int n = static_cast<int>(range.end - range.begin);
    std::vector<DataItem> items(n);
    num::parallel_for(n, [&](std::size_t i) {
      DataItem& it = items[i];
      it.id = item_id(range.subset, static_cast<int>(i));
      it.seed = range.begin + i;
      num::Rng rng(it.seed);
      make(it, rng);
    });
    return items;
  };
  auto add_file = [](DataItem& it, const std::string& key, Tensor t) {
    it.files[key] = it.id + "." + key + ".fdt";
    it.tensors[key] = std::move(t);
  };

  auto backbone = gen(ranges[0], [&](DataItem& it, num::Rng& rng) {
    WorldSpec s = training_scene(cfg.H, cfg.W, 1, rng);
    it.caption = caption(s);
    it.scene_hash = scene_hash(s);
    add_file(it, "frame", render(s));
  });
  auto edit = gen(ranges[1], [&](DataItem& it, num::Rng& rng) {
    WorldSpec s = sample_scene(cfg.H, cfg.W, 1, rng);
    auto ins = sample_any_instruction(s, rng);
    it.task = to_string(ins.task);
    it.caption = ins.c_out;
    it.instruction = ins.c_instruct;
    it.scene_hash = scene_hash(s);
    Tensor img = render(s);
    add_file(it, "c_img", img);
    add_file(it, "target", oracle_edit(img, s, ins));
  });
  auto video = gen(ranges[2], [&](DataItem& it, num::Rng& rng) {
    WorldSpec s = training_scene(cfg.H, cfg.W, cfg.F, rng);
    it.caption = caption(s);
    it.scene_hash = scene_hash(s);
    add_file(it, "video", render(s));
  });
  auto fdd = gen(ranges[3], [&](DataItem& it, num::Rng& rng) {
    WorldSpec s = sample_scene(cfg.H, cfg.W, cfg.F, rng);
    auto ins = sample_any_instruction(s, rng);
    it.task = to_string(ins.task);
    it.caption = ins.c_out;
    it.instruction = ins.c_instruct;
    it.scene_hash = scene_hash(s);
    add_file(it, "c_vid", render(s));
  });
  for (const auto* set : {&backbone, &edit, &video, &fdd}) {
    for (const auto& it : *set) train_hashes.insert(it.scene_hash);
  }
  auto eval = gen(ranges[4], [&](DataItem& it, num::Rng& rng) {
    WorldSpec s = sample_scene(cfg.H, cfg.W, cfg.F, rng);
    while (train_hashes.count(scene_hash(s))) s = sample_scene(cfg.H, cfg.W, cfg.F, rng);
    auto ins = sample_any_instruction(s, rng);
    it.task = to_string(ins.task);
    it.caption = ins.c_out;
    it.instruction = ins.c_instruct;
    it.scene_hash = scene_hash(s);
    Tensor vid = render(s);
    add_file(it, "c_vid", vid);
    add_file(it, "oracle", oracle_edit(vid, s, ins));
    add_file(it, "mask", mask_tensor(change_mask(s, ins), s));
  });

  write_manifest(root / "backbone", backbone);
  write_manifest(root / "edit", edit);
  write_manifest(root / "video", video);
  write_manifest(root / "fdd", fdd);
  write_manifest(root / "eval", eval);
}

namespace {

Subset read_subset(const fs::path& root, const std::string& name, const std::set<std::string>* allowed) {
  const fs::path dir = root / name;
  std::ifstream in(dir / "manifest.tsv");
  if (!in) throw MissingDependency((dir / "manifest.tsv").string());
  Subset out{name, {}};
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> col;
    std::istringstream row(line);
    std::string c;
    while (std::getline(row, c, '\t')) col.push_back(c);
    if (col.size() != 7) throw std::runtime_error(name + "/manifest.tsv: malformed row '" + line + "'");
    DataItem it;
    it.id = col[0];
    it.task = col[1];
    it.caption = split_ints(col[2]);
    it.instruction = split_ints(col[3]);
    it.scene_hash = std::stoull(col[4]);
    it.seed = std::stoull(col[5]);
    std::istringstream files(col[6]);
    std::string kv;
    while (std::getline(files, kv, ',')) {
      const auto eq = kv.find('=');
      const std::string key = kv.substr(0, eq), file = kv.substr(eq + 1);
      if (allowed && !allowed->count(key)) {
        throw std::runtime_error(name + "/manifest.tsv: field '" + key + "' is not part of an unsupervised triplet");
      }
      it.files[key] = file;
      it.tensors[key] = num::read_fdt1(dir / file);
    }
    out.items.push_back(std::move(it));
  }
  return out;
}

}  // namespace

Subset load_subset(const fs::path& root, const std::string& name) { return read_subset(root, name, nullptr); }

Subset load_fdd_triplets(const fs::path& root) {
  static const std::set<std::string> allowed{"c_vid"};
  return read_subset(root, "fdd", &allowed);
}

void write_ppm(const fs::path& path, const Tensor& image, int zoom) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm expects [3,H,W], got " + num::to_string(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << w * zoom << ' ' << h * zoom << "\n255\n";
  const float* p = image.ptr();
  for (int r = 0; r < h * zoom; ++r) {
    for (int c = 0; c < w * zoom; ++c) {
      for (int k = 0; k < 3; ++k) {
        const float v = std::clamp(p[(k * h + r / zoom) * w + c / zoom], -1.0f, 1.0f);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0f) * 127.5f))));
      }
    }
  }
}

Tensor tile_grid(const std::vector<std::vector<Tensor>>& tiles) {
  const int rows = static_cast<int>(tiles.size());
  const int cols = static_cast<int>(tiles.at(0).size());
  const int h = tiles[0][0].dim(1), w = tiles[0][0].dim(2);
  const int H = rows * (h + 1) - 1, W = cols * (w + 1) - 1;
  Tensor out = Tensor::full({3, H, W}, -1.0f);
  float* o = out.mutable_data().data();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const Tensor& t = tiles[r].at(c);
      for (int k = 0; k < 3; ++k) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            o[(k * H + r * (h + 1) + y) * W + c * (w + 1) + x] = t.ptr()[(k * h + y) * w + x];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace fddlab::worldgen
