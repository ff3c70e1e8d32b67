#include "fddlab/fdd/fdd.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fddlab/diffusion/kbin.hpp"
#include "fddlab/errors.hpp"
#include "fddlab/numerics/fdt1.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::fdd {

using models::ConditionPack;
using models::ModelSet;
using models::Variant;
using num::Rng;
namespace fs = std::filesystem;

Preset parse_preset(const std::string& name) {
  if (name == "full") return Preset::Full;
  if (name == "random_init") return Preset::RandomInit;
  if (name == "no_alignment") return Preset::NoAlignment;
  if (name == "no_sds") return Preset::NoSds;
  if (name == "no_disc") return Preset::NoDisc;
  if (name == "no_kbin") return Preset::NoKbin;
  throw std::invalid_argument("unknown ablation preset '" + name +
                              "' (expected full, random_init, no_alignment, no_sds, no_disc, no_kbin)");
}

std::string to_string(Preset p) {
  switch (p) {
    case Preset::Full: return "full";
    case Preset::RandomInit: return "random_init";
    case Preset::NoAlignment: return "no_alignment";
    case Preset::NoSds: return "no_sds";
    case Preset::NoDisc: return "no_disc";
    case Preset::NoKbin: return "no_kbin";
  }
  return "?";
}

FddConfig apply_preset(FddConfig c, Preset p) {
  const int total = c.total_iters();
  switch (p) {
    case Preset::Full: break;
    case Preset::RandomInit: c.init = Init::Random; break;
    case Preset::NoAlignment:
      c.warmup_sds_iters = 0;
      c.adversarial_iters = 0;
      break;
    case Preset::NoSds:
      c.lambda = 0.0;
      c.warmup_sds_iters = 0;
      c.adversarial_iters = total;
      break;
    case Preset::NoDisc:
      c.warmup_sds_iters = total;
      c.adversarial_iters = 0;
      break;
    case Preset::NoKbin: c.kbin = false; break;
  }
  return c;
}

const char* to_string(GLossForm f) { return f == GLossForm::Paper ? "paper" : "standard_hinge"; }

GLossForm parse_g_loss_form(const std::string& name) {
  if (name == "paper") return GLossForm::Paper;
  if (name == "standard_hinge") return GLossForm::StandardHinge;
  throw std::invalid_argument("unknown g_loss_form '" + name + "'");
}

std::vector<int> student_steps(const FddConfig& cfg, int T, Rng& rng) {
  if (cfg.k < 1) throw std::invalid_argument("fdd: k must be at least 1");
  return cfg.kbin ? diffusion::kbin_timesteps(cfg.k, T, rng).steps : diffusion::uniform_timesteps(cfg.k, T);
}

Tensor student_generate(const ModelSet& student, const ConditionPack& pack, const Tensor& noise,
                        const std::vector<int>& steps, const diffusion::NoiseSchedule& sched) {
  try {
    return diffusion::ddim_sample(models::denoiser(Variant::Phi, student, pack), noise, steps, sched);
  } catch (const std::length_error& e) {
    throw std::length_error("student_generate: tape overflow with k=" + std::to_string(steps.size()) + " (" +
                            e.what() + ")");
  }
}

Tensor teacher_sample_psi(const ModelSet& teacher, const Tensor& c_vid, const std::vector<int>& c_out,
                          const std::vector<int>& c_instruct, int steps, const diffusion::NoiseSchedule& sched,
                          Rng& rng) {
  num::NoTapeScope off;
  ConditionPack p;
  p.frames = 1;
  p.c_out.assign(c_vid.dim(0), c_out);
  p.c_instruct.assign(c_vid.dim(0), c_instruct);
  p.c_vid = c_vid;
  return models::sample_variant(Variant::Psi, teacher, p, diffusion::uniform_timesteps(steps, sched.T), sched, rng);
}

Tensor teacher_sample_rho(const ModelSet& teacher, const std::vector<int>& c_out, const Tensor& first, int frames,
                          int steps, const diffusion::NoiseSchedule& sched, Rng& rng) {
  num::NoTapeScope off;
  ConditionPack p;
  p.frames = frames;
  p.c_out = {c_out};
  p.first_frame = models::first_frame_input(first, {1.0f});
  return models::sample_variant(Variant::Rho, teacher, p, diffusion::uniform_timesteps(steps, sched.T), sched, rng);
}

double sds_weight(Weighting w, const diffusion::NoiseSchedule& sched, int t) {
  return w == Weighting::Unit ? 1.0 : sched.alpha_bar.at(t);
}

Tensor sds_loss(Variant teacher_variant, const ModelSet& teacher, const Tensor& x0, const ConditionPack& pack,
                const std::vector<int>& t, const Tensor& eps, const diffusion::NoiseSchedule& sched, Weighting w) {
  const int clips = pack.clips(), F = pack.frames;
  if (static_cast<int>(t.size()) != clips || x0.dim(0) != clips * F) {
    throw ShapeError("sds: " + std::to_string(t.size()) + " steps and " + std::to_string(x0.dim(0)) + " rows for " +
                     std::to_string(clips) + " clips x " + std::to_string(F));
  }
  Tensor residual;
  {
    num::NoTapeScope off;
    const Tensor x_t = diffusion::q_sample(x0, t, eps, sched);
    if (teacher_variant == Variant::Psi) {
      ConditionPack p;
      p.frames = 1;
      std::vector<int> rows_t;
      for (int c = 0; c < clips; ++c) {
        for (int f = 0; f < F; ++f) {
          p.c_out.push_back(pack.c_out.at(c));
          p.c_instruct.push_back(pack.c_instruct.at(c));
          rows_t.push_back(t[c]);
        }
      }
      p.c_vid = pack.c_vid;
      const Tensor v = models::compose_forward(Variant::Psi, teacher, x_t, rows_t, p);
      residual = num::sub(diffusion::vpred_to_eps(v, x_t, rows_t, sched), eps);
    } else if (teacher_variant == Variant::Rho) {
      ConditionPack p;
      p.frames = F;
      p.c_out = pack.c_out;
      p.first_frame = pack.first_frame;
      const Tensor v = models::compose_forward(Variant::Rho, teacher, x_t, t, p);
      residual = num::sub(diffusion::vpred_to_eps(v, x_t, t, sched), eps);
    } else {
      throw std::invalid_argument("sds: teacher must be psi or rho, got " + models::to_string(teacher_variant));
    }
    if (w != Weighting::Unit) {
      std::vector<float> c(x0.dim(0));
      for (int i = 0; i < x0.dim(0); ++i) c[i] = static_cast<float>(sds_weight(w, sched, t[i / F]));
      num::Shape s(x0.rank(), 1);
      s[0] = x0.dim(0);
      residual = num::mul(residual, Tensor::from(s, std::move(c)));
    }
  }
  return num::mean(num::mul(residual, x0));
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Tensor first_rows(const Tensor& x, int frames) {
  const int b = x.dim(0) / frames;
  std::vector<int> rows(b);
  for (int i = 0; i < b; ++i) rows[i] = i * frames;
  const int per = static_cast<int>(x.numel() / x.dim(0));
  return num::reshape(num::gather(num::reshape(x, {x.dim(0), per}), rows), {b, x.dim(1), x.dim(2), x.dim(3)});
}

}  // namespace

std::vector<PoolEntry> build_teacher_pool(const ModelSet& teacher, const worldgen::Subset& triplets,
                                          const diffusion::NoiseSchedule& sched, int steps, std::uint64_t seed,
                                          const fs::path& cache_dir) {
  std::ostringstream key;
  key << "theta " << hex(teacher.theta.checksum()) << "\nedit " << hex(teacher.edit.checksum()) << "\nvideo "
      << hex(teacher.video.checksum()) << "\nT " << sched.T << "\nsteps " << steps << "\nseed " << seed << "\nitems "
      << triplets.items.size() << '\n';
  std::vector<PoolEntry> pool(triplets.items.size());
  if (!cache_dir.empty()) {
    std::ifstream in(cache_dir / "pool.key");
    std::stringstream have;
    have << in.rdbuf();
    if (in && have.str() == key.str()) {
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const std::string& id = triplets.items[i].id;
        pool[i].psi = num::read_fdt1(cache_dir / (id + ".psi.fdt"));
        pool[i].rho = num::read_fdt1(cache_dir / (id + ".rho.fdt"));
      }
      return pool;
    }
  }
  const Rng root = Rng(seed).split("teacher_pool");
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& it = triplets.items[i];
    const Tensor& c_vid = it.tensors.at("c_vid");
    Rng r = root.split(static_cast<std::uint64_t>(i));
    Rng r_psi = r.split("psi"), r_rho = r.split("rho");
    pool[i].psi = teacher_sample_psi(teacher, c_vid, it.caption, it.instruction, steps, sched, r_psi);
    pool[i].rho = teacher_sample_rho(teacher, it.caption, num::slice(pool[i].psi, 0, 0, 1), c_vid.dim(0), steps, sched,
                                     r_rho);
  }
  if (!cache_dir.empty()) {
    fs::create_directories(cache_dir);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const std::string& id = triplets.items[i].id;
      num::write_fdt1(cache_dir / (id + ".psi.fdt"), pool[i].psi);
      num::write_fdt1(cache_dir / (id + ".rho.fdt"), pool[i].rho);
    }
    std::ofstream(cache_dir / "pool.key") << key.str();
  }
  return pool;
}

FddBatch make_batch(const worldgen::Subset& triplets, const std::vector<PoolEntry>& pool, const std::vector<int>& idx) {
  if (pool.size() != triplets.items.size()) throw std::invalid_argument("fdd: teacher pool does not match the triplets");
  FddBatch b;
  std::vector<Tensor> psi, rho;
  for (int i : idx) {
    const auto& it = triplets.items.at(i);
    b.pack.c_out.push_back(it.caption);
    b.pack.c_instruct.push_back(it.instruction);
    psi.push_back(pool.at(i).psi);
    rho.push_back(pool.at(i).rho);
  }
  b.pack.c_vid = worldgen::stack_field(triplets, idx, "c_vid");
  b.pack.frames = b.pack.c_vid.dim(0) / static_cast<int>(idx.size());
  b.real_psi = num::concat(std::span<const Tensor>(psi), 0);
  b.real_rho = num::concat(std::span<const Tensor>(rho), 0);
  b.pack.first_frame =
      models::first_frame_input(first_rows(b.real_psi, b.pack.frames), std::vector<float>(idx.size(), 1.0f));
  return b;
}

FddState make_state(const ModelSet& teacher, const FddConfig& cfg) {
  FddState st;
  Rng r = Rng(cfg.seed).split("disc");
  Rng re = r.split("edit"), rv = r.split("video");
  st.d_e = make_edit_disc(teacher.cfg, cfg.disc, re);
  st.d_v = make_video_disc(teacher.cfg, cfg.disc, rv);
  st.adam_e.config.lr = cfg.disc_lr;
  st.adam_v.config.lr = cfg.disc_lr;
  return st;
}

ModelSet make_student(const ModelSet& teacher, const FddConfig& cfg) {
  ModelSet s = teacher;
  Rng r = Rng(cfg.seed).split("student");
  if (cfg.init == Init::Random) {
    Rng re = r.split("edit"), rv = r.split("video");
    s.theta = teacher.theta.clone();
    s.edit = models::make_edit_adapter(s.theta, s.cfg, s.edit_cfg, re);
    s.video = models::make_video_adapter(s.cfg, s.video_cfg, rv);
  }
  Rng rl = r.split("lora");
  s.lora = models::make_lora(s.theta, s.lora_cfg, rl);
  return s;
}

std::vector<ParamSet*> student_trainables(ModelSet& student, const FddConfig& cfg) {
  if (cfg.init == Init::Random) return {&student.theta, &student.edit, &student.video, &student.lora};
  return {&student.lora};
}

StepRecord fdd_train_step(const ModelSet& teacher, ModelSet& student, FddState& st, const FddBatch& b,
                          const FddConfig& cfg, const diffusion::NoiseSchedule& sched, int iter, Rng rng) {
  const bool adversarial = iter >= cfg.warmup_sds_iters;
  const int clips = b.pack.clips(), F = b.pack.frames;
  const Tensor& c_vid = b.pack.c_vid;
  StepRecord rec;
  rec.iter = iter;
  rec.phase = adversarial ? "adv" : "sds";

  Rng r_steps = rng.split("steps"), r_noise = rng.split("noise"), r_e = rng.split("sds_edit"),
      r_v = rng.split("sds_video");
  const auto steps = student_steps(cfg, sched.T, r_steps);
  const Tensor noise = num::randn(c_vid.shape(), r_noise);
  auto draw = [&](Rng& r) {
    std::vector<int> t(clips);
    for (int& s : t) s = r.uniform_int(1, sched.T);
    return std::make_pair(t, num::randn(c_vid.shape(), r));
  };
  const auto [t_e, eps_e] = draw(r_e);
  const auto [t_v, eps_v] =
      cfg.sds_t_sampling == SdsSampling::Shared ? std::make_pair(t_e, eps_e) : draw(r_v);

  auto trainables = student_trainables(student, cfg);
  for (ParamSet* p : trainables) p->set_trainable(true);
  const float a = static_cast<float>(cfg.alpha), be = static_cast<float>(cfg.beta),
              lam = static_cast<float>(cfg.lambda);

  num::Tape tape(cfg.tape_limit);
  num::Gradients grads;
  {
    num::TapeScope on(tape);
    const Tensor x0 = student_generate(student, b.pack, noise, steps, sched);
    const Tensor sds_e = sds_loss(Variant::Psi, teacher, x0, b.pack, t_e, eps_e, sched, cfg.weighting);
    const Tensor sds_v = sds_loss(Variant::Rho, teacher, x0, b.pack, t_v, eps_v, sched, cfg.weighting);
    rec.sds_edit = sds_e.item();
    rec.sds_video = sds_v.item();
    Tensor edit_term = num::scale(sds_e, lam), video_term = num::scale(sds_v, lam);

    if (adversarial) {
      {
        Tensor fake = x0.clone();
        fake.set_requires_grad(false);
        num::Tape dtape;
        num::TapeScope don(dtape);
        st.d_e.set_trainable(true);
        st.d_v.set_trainable(true);
        const Tensor ld_e = hinge_d_loss(
            edit_disc_scores(st.d_e, teacher.theta, teacher.cfg, b.real_psi, c_vid, b.pack.c_instruct, F),
            edit_disc_scores(st.d_e, teacher.theta, teacher.cfg, fake, c_vid, b.pack.c_instruct, F));
        const Tensor ld_v =
            hinge_d_loss(video_disc_scores(st.d_v, teacher.theta, teacher.cfg, b.real_rho, b.pack.c_out, F),
                         video_disc_scores(st.d_v, teacher.theta, teacher.cfg, fake, b.pack.c_out, F));
        rec.d_edit = ld_e.item();
        rec.d_video = ld_v.item();
        const Tensor ld = num::add(num::scale(ld_e, a), num::scale(ld_v, be));
        if (!std::isfinite(ld.item())) {
          throw NumericalError("fdd: discriminator loss diverged at iteration " + std::to_string(iter));
        }
        const auto gd = dtape.backward(ld);
        num::adam_step(st.d_e.items(), gd, st.adam_e);
        num::adam_step(st.d_v.items(), gd, st.adam_v);
        st.d_e.set_trainable(false);
        st.d_v.set_trainable(false);
      }
      const Tensor g_e = hinge_g_loss(
          edit_disc_scores(st.d_e, teacher.theta, teacher.cfg, x0, c_vid, b.pack.c_instruct, F), cfg.g_loss_form);
      const Tensor g_v =
          hinge_g_loss(video_disc_scores(st.d_v, teacher.theta, teacher.cfg, x0, b.pack.c_out, F), cfg.g_loss_form);
      rec.g_edit = g_e.item();
      rec.g_video = g_v.item();
      edit_term = num::add(g_e, edit_term);
      video_term = num::add(g_v, video_term);
    }
    const Tensor loss = num::add(num::scale(edit_term, a), num::scale(video_term, be));
    if (!std::isfinite(loss.item())) {
      for (ParamSet* p : trainables) p->set_trainable(false);
      throw NumericalError("fdd: generator loss diverged at iteration " + std::to_string(iter));
    }
    grads = tape.backward(loss);
  }

  auto is_trained = [&](const ParamSet* p) {
    for (const ParamSet* q : trainables) {
      if (q == p) return true;
    }
    return false;
  };
  const std::vector<const ParamSet*> watched{&student.theta, &student.edit, &student.video, &teacher.theta,
                                             &teacher.edit,  &teacher.video, &st.d_e,        &st.d_v};
  for (const ParamSet* frozen : watched) {
    if (is_trained(frozen)) continue;
    for (const auto& nt : frozen->items()) {
      if (grads.has(nt.tensor)) {
        throw std::logic_error("fdd: gradient reached frozen parameter " + frozen->tag() + "/" + nt.name);
      }
    }
  }
  try {
    for (ParamSet* p : trainables) {
      auto& adam = st.adam_student[p->tag()];
      adam.config.lr = cfg.lr;
      num::adam_step(p->items(), grads, adam);
    }
  } catch (const NumericalError& e) {
    for (ParamSet* p : trainables) p->set_trainable(false);
    throw NumericalError("fdd: iteration " + std::to_string(iter) + ": " + e.what());
  }
  for (ParamSet* p : trainables) p->set_trainable(false);
  return rec;
}

FddRun train_fdd(const ModelSet& teacher, const worldgen::Subset& triplets, const std::vector<PoolEntry>& pool,
                 const FddConfig& cfg, const diffusion::NoiseSchedule& sched, const fs::path& out_dir) {
  if (cfg.warmup_sds_iters < 0 || cfg.adversarial_iters < 0) throw std::invalid_argument("fdd: negative iterations");
  if (triplets.items.empty()) throw std::invalid_argument("fdd: no training triplets");
  const auto start = std::chrono::steady_clock::now();
  FddRun run{make_student(teacher, cfg), make_state(teacher, cfg), {}, 0.0};
  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open(out_dir / "fdd.csv");
    csv << "iter,L_SDS-Edit,L_SDS-Video,L_G-Edit,L_G-Video,L_D-Edit,L_D-Video,phase\n";
  }
  const Rng root = Rng(cfg.seed).split("fdd");
  const int n = static_cast<int>(triplets.items.size());
  for (int it = 0; it < cfg.total_iters(); ++it) {
    Rng r = root.split(static_cast<std::uint64_t>(it));
    Rng rb = r.split("batch");
    std::vector<int> idx(cfg.batch);
    for (int& i : idx) i = rb.uniform_int(0, n - 1);
    const FddBatch batch = make_batch(triplets, pool, idx);
    StepRecord rec = fdd_train_step(teacher, run.student, run.state, batch, cfg, sched, it, r.split("step"));
    if (csv.is_open()) {
      csv << rec.iter << ',' << rec.sds_edit << ',' << rec.sds_video << ',' << rec.g_edit << ',' << rec.g_video << ','
          << rec.d_edit << ',' << rec.d_video << ',' << rec.phase << '\n';
    }
    run.records.push_back(std::move(rec));
    if (cfg.checkpoint_every > 0 && !out_dir.empty() && (it + 1) % cfg.checkpoint_every == 0) {
      models::save_model_set(out_dir / ("ckpt_" + std::to_string(it + 1)), run.student, sched,
                             {&run.state.d_e, &run.state.d_v});
    }
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace fddlab::fdd
