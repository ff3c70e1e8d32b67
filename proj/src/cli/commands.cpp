#include "fddlab/cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/fdt1.hpp"
#include "fddlab/numerics/gradcheck.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::cli {

namespace fs = std::filesystem;
using models::ModelSet;
using models::Variant;
using num::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_kv(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingDependency(path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string seconds_str(double s) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << s;
  return ss.str();
}

void require_dir(const fs::path& p) {
  if (!fs::exists(p)) throw MissingDependency(p.string());
}

models::LoadedModel load_stage(const Layout& out, const std::string& stage) {
  require_dir(out.ckpt(stage));
  return models::load_model_set(out.ckpt(stage));
}

teachers::PretrainConfig seeded(teachers::PretrainConfig t, const RunConfig& cfg, const fs::path& dir) {
  t.seed = cfg.seed;
  t.out_dir = dir;
  return t;
}

void report_log(std::ostream& log, const char* stage, const teachers::TrainLog& tl) {
  log << stage << ": " << tl.train.size() << " iterations in " << seconds_str(tl.seconds) << " s";
  if (!tl.heldout.empty()) {
    log << ", held-out loss " << tl.heldout.front().loss << " -> " << tl.heldout.back().loss;
  }
  log << '\n';
}

}  // namespace

void gen_data(const RunConfig& cfg, const Layout& out, std::ostream& log) {
  const auto t0 = Clock::now();
  worldgen::DatasetConfig d = cfg.data;
  d.seed = cfg.seed;
  worldgen::build_datasets(out.data(), d);
  stamp(out.data(), cfg);
  write_kv(out.data() / "timing.txt", {{"seconds", seconds_str(since(t0))}});
  log << "gen-data: wrote " << out.data().string() << " in " << seconds_str(since(t0)) << " s\n";
}

void pretrain_backbone(const RunConfig& cfg, const Layout& out, std::ostream& log) {
  const auto frames = worldgen::load_subset(out.data(), "backbone");
  const auto sched = make_schedule(cfg);
  models::BackboneConfig b = cfg.backbone;
  b.vocab = worldgen::tok::kVocab;
  num::Rng init = num::Rng(cfg.seed).split("init");
  ModelSet m = models::make_model_set(b, cfg.edit_adapter, cfg.video_adapter, cfg.lora, init);
  const fs::path dir = out.stage("backbone");
  stamp(dir, cfg);
  const auto tl = teachers::pretrain_backbone(m, frames, sched, seeded(cfg.teacher_backbone, cfg, dir));
  models::save_model_set(out.ckpt("backbone"), m, sched);
  write_kv(dir / "timing.txt", {{"seconds", seconds_str(tl.seconds)}});
  report_log(log, "pretrain-backbone", tl);
}

void train_edit(const RunConfig& cfg, const Layout& out, std::ostream& log) {
  auto lm = load_stage(out, "backbone");
  const auto pairs = worldgen::load_subset(out.data(), "edit");
  const fs::path dir = out.stage("edit");
  stamp(dir, cfg);
  const auto tl = teachers::train_edit_adapter(lm.model, pairs, lm.sched, seeded(cfg.teacher_edit, cfg, dir));
  models::save_model_set(out.ckpt("edit"), lm.model, lm.sched);
  write_kv(dir / "timing.txt", {{"seconds", seconds_str(tl.seconds)}});
  report_log(log, "train-edit", tl);
}

void train_video(const RunConfig& cfg, const Layout& out, std::ostream& log) {
  auto lm = load_stage(out, "backbone");
  const auto videos = worldgen::load_subset(out.data(), "video");
  const fs::path dir = out.stage("video");
  stamp(dir, cfg);
  const auto tl = teachers::train_video_adapter(lm.model, videos, lm.sched, seeded(cfg.teacher_video, cfg, dir));
  models::save_model_set(out.ckpt("video"), lm.model, lm.sched);
  write_kv(dir / "timing.txt", {{"seconds", seconds_str(tl.seconds)}});
  report_log(log, "train-video", tl);
}

models::LoadedModel load_teachers(const Layout& out) {
  auto edit = load_stage(out, "edit");
  auto video = load_stage(out, "video");
  if (edit.model.theta.checksum() != video.model.theta.checksum()) {
    throw std::runtime_error("edit and video checkpoints were trained on different backbones");
  }
  edit.model.video = video.model.video;
  edit.model.video_cfg = video.model.video_cfg;
  return edit;
}

void align(const RunConfig& cfg, const Layout& out, fdd::Preset preset, std::ostream& log) {
  auto teachers_lm = load_teachers(out);
  const ModelSet& teacher = teachers_lm.model;
  const auto& sched = teachers_lm.sched;
  const auto triplets = worldgen::load_fdd_triplets(out.data());
  fdd::FddConfig f = cfg.fdd;
  f.seed = cfg.seed;
  f = fdd::apply_preset(f, preset);
  const fs::path dir = out.fdd(fdd::to_string(preset));
  stamp(dir, cfg);

  double pool_seconds = 0.0;
  fdd::FddRun run{fdd::make_student(teacher, f), fdd::make_state(teacher, f), {}, 0.0};
  if (f.total_iters() > 0) {
    const auto t0 = Clock::now();
    const auto pool = fdd::build_teacher_pool(teacher, triplets, sched, f.teacher_steps, cfg.seed, out.pool());
    pool_seconds = since(t0);
    log << "teacher pool: " << pool.size() << " items in " << seconds_str(pool_seconds) << " s\n";
    run = fdd::train_fdd(teacher, triplets, pool, f, sched, dir);
  } else {
    std::ofstream(dir / "fdd.csv", std::ios::binary)
        << "iter,L_SDS-Edit,L_SDS-Video,L_G-Edit,L_G-Video,L_D-Edit,L_D-Video,phase\n";
  }
  models::save_model_set(dir / "ckpt", run.student, sched, {&run.state.d_e, &run.state.d_v});
  write_kv(dir / "timing.txt", {{"preset", fdd::to_string(preset)},
                                {"iterations", std::to_string(f.total_iters())},
                                {"train_seconds", seconds_str(run.seconds)},
                                {"pool_seconds", seconds_str(pool_seconds)}});
  log << "fdd " << fdd::to_string(preset) << ": " << f.total_iters() << " iterations (" << f.warmup_sds_iters
      << " sds + " << f.adversarial_iters << " adversarial) in " << seconds_str(run.seconds) << " s\n";
}

eval::MetricsReport evaluate(const RunConfig& cfg, const Layout& out, const std::string& run, std::ostream& log) {
  const fs::path src = out.fdd(run);
  require_dir(src / "ckpt");
  const auto timing = read_kv(src / "timing.txt");
  auto student = models::load_model_set(src / "ckpt");
  auto backbone = load_stage(out, "backbone");
  const auto eval_set = worldgen::load_subset(out.data(), "eval");

  eval::EvalConfig ec = cfg.eval;
  ec.seed = cfg.seed;
  const Variant v = run == "no_alignment" ? Variant::Eta : Variant::Phi;
  eval::RunMeta meta;
  meta.run = run;
  meta.config_hash = config_hash(cfg);
  meta.iteration = std::stoi(timing.at("iterations"));
  meta.train_seconds = std::stod(timing.at("train_seconds"));

  const fs::path dir = out.eval(run);
  stamp(dir, cfg);
  const auto t0 = Clock::now();
  auto report = eval::evaluate_run(eval::model_editor(v, student.model, student.sched, ec), eval_set,
                                   eval::backbone_features(backbone.model.theta, backbone.model.cfg), ec, meta, dir);
  write_kv(dir / "timing.txt", {{"iterations", timing.at("iterations")},
                                {"train_seconds", timing.at("train_seconds")},
                                {"eval_seconds", seconds_str(since(t0))}});
  log << std::fixed << std::setprecision(4) << "evaluate " << run << " (" << models::to_string(v) << ", "
      << report.items.size() << " items): edit_fidelity_db=" << report.edit_fidelity_db
      << " temporal_consistency=" << report.temporal_consistency
      << " directional_agreement=" << report.directional_agreement
      << " unchanged_region_mse=" << report.unchanged_region_mse << " train_seconds=" << timing.at("train_seconds")
      << '\n';
  log.unsetf(std::ios::floatfield);
  return report;
}

std::vector<eval::MetricComparison> compare(const Layout& out, const std::string& a, const std::string& b,
                                            std::ostream& log) {
  auto resolve = [&](const std::string& s) {
    const fs::path p(s);
    if (fs::is_regular_file(p)) return p;
    return out.eval(s) / "report.csv";
  };
  const auto ra = eval::read_report_csv(resolve(a));
  const auto rb = eval::read_report_csv(resolve(b));
  const auto rows = eval::compare_reports(ra, rb);
  auto label = [](const std::string& s) { return fs::path(s).has_extension() ? fs::path(s).stem().string() : s; };
  fs::create_directories(out.root / "eval");
  const fs::path dest = out.root / "eval" / ("compare_" + label(a) + "_vs_" + label(b) + ".csv");
  eval::write_comparison_csv(dest, rows);
  log << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    log << r.metric << ": " << a << "=" << r.mean_a << " " << b << "=" << r.mean_b << " delta=" << r.delta
        << " win_rate(" << b << ")=" << r.win_rate << " items=" << r.items << '\n';
  }
  log.unsetf(std::ios::floatfield);
  log << "wrote " << dest.string() << '\n';
  return rows;
}

void sample(const RunConfig& cfg, const Layout& out, const std::string& run, const fs::path& video,
            const std::string& instruction, const std::string& caption, const fs::path& dest, std::ostream& log) {
  if (!fs::exists(video)) throw MissingDependency(video.string());
  const Tensor clip = num::read_fdt1(video);
  if (clip.rank() != 4 || clip.dim(1) != 3) {
    throw ShapeError("sample: expected a [F,3,H,W] clip, got " + num::to_string(clip.shape()));
  }
  const fs::path src = out.fdd(run) / "ckpt";
  require_dir(src);
  auto student = models::load_model_set(src);

  worldgen::DataItem item;
  item.id = video.stem().string();
  item.instruction = worldgen::parse_tokens(instruction);
  item.caption = worldgen::parse_tokens(caption);
  item.tensors["c_vid"] = clip;
  eval::EvalConfig ec = cfg.eval;
  const Variant v = run == "no_alignment" ? Variant::Eta : Variant::Phi;
  num::Rng rng = num::Rng(cfg.seed).split("sample");
  const Tensor edited = eval::model_editor(v, student.model, student.sched, ec)(item, rng);

  stamp(dest, cfg);
  std::vector<std::vector<Tensor>> strip(2);
  for (int f = 0; f < edited.dim(0); ++f) {
    auto frame = [&](const Tensor& x) {
      return num::reshape(num::slice(x, 0, f, 1), {x.dim(1), x.dim(2), x.dim(3)});
    };
    std::ostringstream name;
    name << "frame_" << std::setw(2) << std::setfill('0') << f << ".ppm";
    worldgen::write_ppm(dest / name.str(), frame(edited));
    strip[0].push_back(frame(clip));
    strip[1].push_back(frame(edited));
  }
  worldgen::write_ppm(dest / "strip.ppm", worldgen::tile_grid(strip));
  num::write_fdt1(dest / "edited.fdt", edited);
  log << "sample: " << edited.dim(0) << " frames written to " << dest.string() << '\n';
}

bool selftest(std::ostream& log) {
  bool all = true;
  auto line = [&](bool ok, const std::string& what) {
    log << (ok ? "PASS " : "FAIL ") << what << '\n';
    all = all && ok;
  };

  num::Rng rng(2024);
  for (const auto& c : gradcheck::op_cases()) {
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
      num::Rng r = rng.split(c.name).split(static_cast<std::uint64_t>(i));
      worst = std::max(worst, gradcheck::gradcheck(c.fn, c.make_inputs(r), r).max_error);
    }
    std::ostringstream ss;
    ss << "gradcheck " << c.name << " max_rel_err=" << worst;
    line(worst < 1e-3, ss.str());
  }

  for (int T : {8, 128, 1000}) {
    const auto s = diffusion::make_schedule(T);
    bool mono = true;
    for (int t = 1; t < T; ++t) mono = mono && s.snr(t + 1) < s.snr(t);
    line(s.alpha_bar[T] == 0.0 && mono, "schedule T=" + std::to_string(T) + " zero terminal, SNR strictly decreasing");
  }

  {
    models::BackboneConfig b;
    b.c1 = 16;
    b.c2 = 32;
    b.d = 32;
    num::Rng r(7);
    ModelSet m = models::make_model_set(b, {}, {}, {}, r);
    models::ConditionPack p;
    p.frames = 3;
    p.c_out = {{1, 5}, {2, 7}};
    p.c_instruct = {{43, 4}, {44}};
    p.c_vid = num::rand_uniform({6, 3, 8, 8}, r, -1, 1);
    p.first_frame = models::first_frame_input(num::randn({2, 3, 8, 8}, r), {1.0f, 0.0f});
    const Tensor x = num::randn({6, 3, 8, 8}, r);
    const std::vector<int> t{5, 40};
    num::NoTapeScope off;
    const Tensor base = models::compose_forward(Variant::Backbone, m, x, t, p);
    line(num::bit_equal(models::compose_forward(Variant::Psi, m, x, t, p), base), "zero-init psi == backbone");
    line(num::bit_equal(models::compose_forward(Variant::Rho, m, x, t, p), base), "zero-init rho == per-frame backbone");
    for (auto* set : {&m.edit, &m.video}) {
      for (const auto& item : set->items()) {
        Tensor w = item.tensor;
        for (float& v : w.mutable_data()) v += static_cast<float>(0.05 * (r.uniform() * 2 - 1));
      }
    }
    line(num::bit_equal(models::compose_forward(Variant::Phi, m, x, t, p),
                        models::compose_forward(Variant::Eta, m, x, t, p)),
         "zero-init phi == eta");
  }

  {
    auto s = [](std::vector<float> v) {
      const int n = static_cast<int>(v.size());
      Tensor t = Tensor::from({n}, std::move(v));
      t.set_requires_grad(true);
      return t;
    };
    line(fdd::hinge_d_loss(s({1, 1}), s({-1, -1})).item() == 0.0f, "hinge D(real)=1, D(fake)=-1 gives L_D = 0");
    line(fdd::hinge_d_loss(s({-0.5f}), s({-1})).item() == 1.5f, "hinge D(real)=-0.5 contributes 1.5");
    for (fdd::GLossForm form : {fdd::GLossForm::Paper, fdd::GLossForm::StandardHinge}) {
      Tensor fake = s({-2});
      num::Tape tape;
      num::TapeScope on(tape);
      const Tensor l = fdd::hinge_g_loss(fake, form);
      const auto g = tape.backward(l);
      const bool paper = form == fdd::GLossForm::Paper;
      line(l.item() == (paper ? 0.0f : 2.0f),
           std::string("hinge ") + fdd::to_string(form) + " L_G at D(fake)=-2 is " + (paper ? "0" : "2"));
      line(g.tensor(fake).ptr()[0] == (paper ? 0.0f : -1.0f),
           std::string("hinge ") + fdd::to_string(form) + " gradient at D(fake)=-2 is " + (paper ? "zero" : "live"));
    }
  }
  return all;
}

}  // namespace fddlab::cli
