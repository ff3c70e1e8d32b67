#include "fddlab/eval/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/parallel.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::eval {

namespace {

constexpr const char* kHeader =
    "item_id,task,edit_fidelity_db,temporal_consistency,directional_agreement,unchanged_region_mse";

const Tensor& field(const worldgen::DataItem& item, const char* name) {
  auto it = item.tensors.find(name);
  if (it == item.tensors.end()) {
    throw std::invalid_argument("eval item " + item.id + " has no " + name + " entry");
  }
  return it->second;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

Tensor frame(const Tensor& clip, int f) {
  return num::reshape(num::slice(clip, 0, f, 1), {clip.dim(1), clip.dim(2), clip.dim(3)});
}

}  // namespace

void finalize(MetricsReport& r) {
  std::sort(r.items.begin(), r.items.end(),
            [](const ItemMetrics& a, const ItemMetrics& b) { return a.item_id < b.item_id; });
  double ef = 0, tc = 0, da = 0, um = 0;
  int zero = 0;
  for (const auto& it : r.items) {
    ef += it.edit_fidelity_db;
    tc += it.temporal_consistency;
    da += it.directional_agreement;
    um += it.unchanged_region_mse;
    zero += it.directional_zero_delta;
  }
  const double n = std::max<std::size_t>(1, r.items.size());
  r.edit_fidelity_db = ef / n;
  r.temporal_consistency = tc / n;
  r.directional_agreement = da / n;
  r.unchanged_region_mse = um / n;
  r.zero_delta_items = zero;
}

ItemMetrics score_item(const worldgen::DataItem& item, const Tensor& output, const FeatureFn& features) {
  const Tensor& input = field(item, "c_vid");
  const Tensor& oracle = field(item, "oracle");
  const Tensor& mask = field(item, "mask");
  ItemMetrics m;
  m.item_id = item.id;
  m.task = item.task;
  m.edit_fidelity_db = psnr(output, oracle);
  m.frame_psnr = per_frame_psnr(output, oracle);
  m.temporal_consistency = temporal_consistency(output, features);
  const Directional d = directional_agreement(input, output, oracle, features);
  m.directional_agreement = d.value;
  m.directional_zero_delta = d.zero_delta;
  m.unchanged_region_mse = unchanged_region_mse(output, oracle, mask);
  return m;
}

EditFn model_editor(models::Variant v, const models::ModelSet& m, const diffusion::NoiseSchedule& sched,
                    const EvalConfig& cfg) {
  if (v != models::Variant::Eta && v != models::Variant::Phi) {
    throw std::invalid_argument("model_editor: " + models::to_string(v) + " is not a video editor");
  }
  return [v, &m, &sched, cfg](const worldgen::DataItem& item, num::Rng& rng) {
    num::NoTapeScope off;
    const Tensor& c_vid = field(item, "c_vid");
    models::ConditionPack pack;
    pack.frames = c_vid.dim(0);
    pack.c_out = {item.caption};
    pack.c_instruct = {item.instruction};
    pack.c_vid = c_vid;
    if (m.video_cfg.first_frame) {
      num::Rng r_first = rng.split("first");
      const Tensor first = models::psi_first_frames(
          m, pack, diffusion::uniform_timesteps(cfg.first_frame_steps, sched.T), sched, r_first);
      pack.first_frame = models::first_frame_input(first, {1.0f});
    }
    num::Rng r_video = rng.split("video");
    return models::sample_variant(v, m, pack, diffusion::uniform_timesteps(cfg.steps, sched.T), sched, r_video);
  };
}

EditFn oracle_editor() {
  return [](const worldgen::DataItem& item, num::Rng&) { return field(item, "oracle"); };
}

MetricsReport evaluate_run(const EditFn& edit, const worldgen::Subset& eval_set, const FeatureFn& features,
                           const EvalConfig& cfg, const RunMeta& meta, const std::filesystem::path& out_dir) {
  for (const auto& item : eval_set.items) {
    field(item, "c_vid");
    field(item, "oracle");
    field(item, "mask");
  }
  const num::Rng root = num::Rng(cfg.seed).split("eval");
  const std::size_t n = eval_set.items.size();
  std::vector<Tensor> outputs(n);
  std::vector<ItemMetrics> scores(n);
  num::parallel_for(n, [&](std::size_t i) {
    const auto& item = eval_set.items[i];
    num::Rng rng = root.split(item.id);
    outputs[i] = edit(item, rng);
    scores[i] = score_item(item, outputs[i], features);
  });

  MetricsReport report;
  report.meta = meta;
  report.meta.seed = cfg.seed;
  report.items = std::move(scores);
  finalize(report);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir / "samples");
    write_report_csv(out_dir / "report.csv", report);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return eval_set.items[a].id < eval_set.items[b].id; });
    const std::size_t dump = std::min<std::size_t>(n, std::max(0, cfg.grid_items));
    for (std::size_t k = 0; k < dump; ++k) {
      const auto& item = eval_set.items[order[k]];
      std::vector<std::vector<Tensor>> rows(3);
      for (int f = 0; f < outputs[order[k]].dim(0); ++f) {
        rows[0].push_back(frame(field(item, "c_vid"), f));
        rows[1].push_back(frame(outputs[order[k]], f));
        rows[2].push_back(frame(field(item, "oracle"), f));
      }
      worldgen::write_ppm(out_dir / "samples" / (item.id + ".ppm"), worldgen::tile_grid(rows));
    }
  }
  return report;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# run=" << (r.meta.run.empty() ? "-" : r.meta.run) << " config_hash=" << r.meta.config_hash
      << " seed=" << r.meta.seed << " iteration=" << r.meta.iteration << '\n';
  out << kHeader << '\n';
  for (const auto& it : r.items) {
    out << it.item_id << ',' << it.task << ',' << fmt(it.edit_fidelity_db) << ',' << fmt(it.temporal_consistency)
        << ',' << fmt(it.directional_agreement) << ',' << fmt(it.unchanged_region_mse) << '\n';
  }
}

MetricsReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingDependency(path.string());
  MetricsReport r;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
        if (k == "run") r.meta.run = v;
        else if (k == "config_hash") r.meta.config_hash = v;
        else if (k == "seed") r.meta.seed = std::stoull(v);
        else if (k == "iteration") r.meta.iteration = std::stoi(v);
      }
      continue;
    }
    if (!header) {
      if (line != kHeader) throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 6) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
    }
    ItemMetrics it;
    it.item_id = cols[0];
    it.task = cols[1];
    it.edit_fidelity_db = std::stod(cols[2]);
    it.temporal_consistency = std::stod(cols[3]);
    it.directional_agreement = std::stod(cols[4]);
    it.unchanged_region_mse = std::stod(cols[5]);
    r.items.push_back(std::move(it));
  }
  if (!header) throw std::runtime_error(path.string() + ": missing header");
  finalize(r);
  return r;
}

std::vector<MetricComparison> compare_reports(const MetricsReport& a, const MetricsReport& b) {
  std::map<std::string, const ItemMetrics*> by_id;
  for (const auto& it : a.items) by_id[it.item_id] = &it;
  std::vector<std::pair<const ItemMetrics*, const ItemMetrics*>> pairs;
  for (const auto& it : b.items) {
    auto f = by_id.find(it.item_id);
    if (f != by_id.end()) pairs.emplace_back(f->second, &it);
  }
  if (pairs.empty()) throw std::invalid_argument("compare: the reports share no item ids");
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& x, const auto& y) { return x.first->item_id < y.first->item_id; });

  struct Metric {
    const char* name;
    double ItemMetrics::*field;
    bool higher_better;
  };
  const Metric metrics[] = {{"edit_fidelity_db", &ItemMetrics::edit_fidelity_db, true},
                            {"temporal_consistency", &ItemMetrics::temporal_consistency, true},
                            {"directional_agreement", &ItemMetrics::directional_agreement, true},
                            {"unchanged_region_mse", &ItemMetrics::unchanged_region_mse, false}};
  std::vector<MetricComparison> out;
  for (const auto& m : metrics) {
    MetricComparison c;
    c.metric = m.name;
    c.items = static_cast<int>(pairs.size());
    double wins = 0.0;
    for (const auto& [x, y] : pairs) {
      const double va = x->*m.field, vb = y->*m.field;
      c.mean_a += va;
      c.mean_b += vb;
      if (va == vb) wins += 0.5;
      else if ((vb > va) == m.higher_better) wins += 1.0;
    }
    c.mean_a /= c.items;
    c.mean_b /= c.items;
    c.delta = c.mean_b - c.mean_a;
    c.win_rate = wins / c.items;
    out.push_back(c);
  }
  return out;
}

void write_comparison_csv(const std::filesystem::path& path, const std::vector<MetricComparison>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "metric,mean_a,mean_b,delta,win_rate_b,items\n";
  for (const auto& c : rows) {
    out << c.metric << ',' << fmt(c.mean_a) << ',' << fmt(c.mean_b) << ',' << fmt(c.delta) << ','
        << fmt(c.win_rate) << ',' << c.items << '\n';
  }
}

}  // namespace fddlab::eval
