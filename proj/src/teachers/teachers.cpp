#include "fddlab/teachers/teachers.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::teachers {

using models::ConditionPack;
using models::ModelSet;
using models::ParamSet;
using models::Variant;
using num::Rng;
using num::Tensor;

namespace {

struct Batch {
  Tensor x0;
  ConditionPack pack;
};

using BatchFn = std::function<Batch(const std::vector<int>& idx, Rng& rng)>;
using GridFn = std::function<Tensor(const std::vector<int>& idx, Rng& rng)>;

struct Loop {
  Variant variant;
  const char* stage;
  ParamSet* trained;
  std::vector<const ParamSet*> frozen;
  int n_items;
  int per_step;  // items per optimizer step
  BatchFn batch;
  GridFn grid;
};

Tensor v_loss(Variant v, const ModelSet& m, const Batch& b, const std::vector<int>& t, const Tensor& eps,
              const diffusion::NoiseSchedule& sched) {
  Tensor x_t = diffusion::q_sample(b.x0, t, eps, sched);
  Tensor d = num::sub(models::compose_forward(v, m, x_t, t, b.pack), diffusion::v_target(b.x0, eps, t, sched));
  return num::mean(num::mul(d, d));
}

std::vector<int> draw_steps(int clips, int T, Rng& rng) {
  std::vector<int> t(clips);
  for (int& s : t) s = rng.uniform_int(1, T);
  return t;
}

TrainLog run(const Loop& L, ModelSet& m, const diffusion::NoiseSchedule& sched, const PretrainConfig& cfg) {
  const int n_train = cfg.overfit ? 1 : L.n_items - cfg.holdout;
  if (n_train < 1 || (!cfg.overfit && cfg.holdout < 1)) {
    throw std::invalid_argument(std::string(L.stage) + ": " + std::to_string(L.n_items) + " items cannot hold " +
                                std::to_string(cfg.holdout) + " held-out items");
  }
  std::vector<int> heldout_idx;
  if (cfg.overfit) {
    heldout_idx = {0};
  } else {
    for (int i = n_train; i < L.n_items; ++i) heldout_idx.push_back(i);
  }
  std::vector<std::uint64_t> before;
  for (const ParamSet* p : L.frozen) before.push_back(p->checksum());

  const auto start = std::chrono::steady_clock::now();
  const Rng root = Rng(cfg.seed).split(L.stage);
  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    csv.open(cfg.out_dir / "loss.csv");
    csv << "iteration,split,loss\n";
  }

  TrainLog log;
  auto heldout = [&](int step) {
    num::NoTapeScope off;
    const Rng r = root.split("heldout");
    double total = 0.0;
    std::size_t rows = 0;
    for (std::size_t c = 0; c < heldout_idx.size(); c += L.per_step) {
      const std::size_t end = std::min(heldout_idx.size(), c + L.per_step);
      std::vector<int> idx(heldout_idx.begin() + c, heldout_idx.begin() + end);
      Rng rc = r.split(static_cast<std::uint64_t>(c));
      Batch b = L.batch(idx, rc);
      const auto t = draw_steps(b.pack.clips(), sched.T, rc);
      const Tensor eps = num::randn(b.x0.shape(), rc);
      total += v_loss(L.variant, m, b, t, eps, sched).item() * b.x0.dim(0);
      rows += b.x0.dim(0);
    }
    const double value = total / rows;
    log.heldout.push_back({step, value});
    if (csv.is_open()) csv << step << ",heldout," << value << '\n';
  };

  L.trained->set_trainable(true);
  num::AdamState adam;
  adam.config.lr = cfg.lr;
  heldout(0);
  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.cosine_decay) {
      const double u = static_cast<double>(it) / cfg.iterations;
      adam.config.lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(u * 3.141592653589793)));
    }
    Rng ri = root.split(static_cast<std::uint64_t>(it));
    std::vector<int> idx(L.per_step);
    for (int& i : idx) i = ri.uniform_int(0, n_train - 1);
    Batch b = L.batch(idx, ri);
    const auto t = draw_steps(b.pack.clips(), sched.T, ri);
    const Tensor eps = num::randn(b.x0.shape(), ri);

    num::Tape tape;
    num::Gradients grads;
    double value = 0.0;
    {
      num::TapeScope on(tape);
      Tensor loss = v_loss(L.variant, m, b, t, eps, sched);
      value = loss.item();
      if (!std::isfinite(value)) {
        L.trained->set_trainable(false);
        throw NumericalError(std::string(L.stage) + ": loss diverged at iteration " + std::to_string(it));
      }
      grads = tape.backward(loss);
    }
    try {
      num::adam_step(L.trained->items(), grads, adam);
    } catch (const NumericalError& e) {
      L.trained->set_trainable(false);
      throw NumericalError(std::string(L.stage) + ": iteration " + std::to_string(it) + ": " + e.what());
    }
    log.train.push_back({it, value});
    if (csv.is_open()) csv << it << ",train," << value << '\n';
    if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations) heldout(it + 1);
    if (cfg.grid_every > 0 && L.grid && !cfg.out_dir.empty() && (it + 1) % cfg.grid_every == 0) {
      num::NoTapeScope off;
      Rng rg = root.split("grid");
      std::vector<int> gi(heldout_idx.begin(), heldout_idx.begin() + std::min<std::size_t>(4, heldout_idx.size()));
      worldgen::write_ppm(cfg.out_dir / ("grid_" + std::to_string(it + 1) + ".ppm"), L.grid(gi, rg));
    }
  }
  L.trained->set_trainable(false);

  for (std::size_t i = 0; i < L.frozen.size(); ++i) {
    if (L.frozen[i]->checksum() != before[i]) {
      throw std::logic_error(std::string(L.stage) + ": frozen component " + L.frozen[i]->tag() +
                             " changed during training");
    }
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

std::vector<std::vector<int>> field_lists(const worldgen::Subset& s, const std::vector<int>& idx, bool instruction) {
  std::vector<std::vector<int>> out;
  for (int i : idx) out.push_back(instruction ? s.items.at(i).instruction : s.items.at(i).caption);
  return out;
}

Tensor row(const Tensor& x, int i) { return num::reshape(num::slice(x, 0, i, 1), {x.dim(1), x.dim(2), x.dim(3)}); }

}  // namespace

std::vector<double> smooth(const std::vector<double>& xs, int window) {
  if (window < 1) throw std::invalid_argument("smooth: window must be positive");
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= static_cast<std::size_t>(window)) acc -= xs[i - window];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

TrainLog pretrain_backbone(ModelSet& m, const worldgen::Subset& frames, const diffusion::NoiseSchedule& sched,
                           const PretrainConfig& cfg) {
  Loop L{Variant::Backbone, "backbone", &m.theta, {}, static_cast<int>(frames.items.size()), cfg.batch, {}, {}};
  L.batch = [&](const std::vector<int>& idx, Rng&) {
    Batch b;
    b.x0 = worldgen::stack_field(frames, idx, "frame");
    b.pack.frames = 1;
    b.pack.c_out = field_lists(frames, idx, false);
    return b;
  };
  L.grid = [&](const std::vector<int>& idx, Rng& rng) {
    Batch b = L.batch(idx, rng);
    const auto out = diffusion::ddim_sample(models::denoiser(Variant::Backbone, m, b.pack), b.x0.shape(),
                                            diffusion::uniform_timesteps(cfg.grid_steps, sched.T), sched, rng);
    std::vector<std::vector<Tensor>> tiles;
    for (int i = 0; i < b.x0.dim(0); ++i) tiles.push_back({row(b.x0, i), row(out, i)});
    return worldgen::tile_grid(tiles);
  };
  return run(L, m, sched, cfg);
}

TrainLog train_edit_adapter(ModelSet& m, const worldgen::Subset& pairs, const diffusion::NoiseSchedule& sched,
                            const PretrainConfig& cfg) {
  Rng init = Rng(cfg.seed).split("edit_init");
  m.edit = models::make_edit_adapter(m.theta, m.cfg, m.edit_cfg, init);
  Loop L{Variant::Psi, "edit", &m.edit, {&m.theta}, static_cast<int>(pairs.items.size()), cfg.batch, {}, {}};
  L.batch = [&](const std::vector<int>& idx, Rng&) {
    Batch b;
    b.x0 = worldgen::stack_field(pairs, idx, "target");
    b.pack.frames = 1;
    b.pack.c_out = field_lists(pairs, idx, false);
    b.pack.c_instruct = field_lists(pairs, idx, true);
    b.pack.c_vid = worldgen::stack_field(pairs, idx, "c_img");
    return b;
  };
  L.grid = [&](const std::vector<int>& idx, Rng& rng) {
    Batch b = L.batch(idx, rng);
    const Tensor out = models::sample_variant(Variant::Psi, m, b.pack,
                                              diffusion::uniform_timesteps(cfg.grid_steps, sched.T), sched, rng);
    std::vector<std::vector<Tensor>> tiles;
    for (int i = 0; i < b.x0.dim(0); ++i) tiles.push_back({row(b.pack.c_vid, i), row(out, i), row(b.x0, i)});
    return worldgen::tile_grid(tiles);
  };
  return run(L, m, sched, cfg);
}

TrainLog train_video_adapter(ModelSet& m, const worldgen::Subset& videos, const diffusion::NoiseSchedule& sched,
                             const PretrainConfig& cfg) {
  if (videos.items.empty()) throw std::invalid_argument("video: empty subset");
  const int F = videos.items.front().tensors.at("video").dim(0);
  if (F > m.video_cfg.max_frames) {
    throw std::invalid_argument("video: clips of " + std::to_string(F) + " frames exceed max_frames " +
                                std::to_string(m.video_cfg.max_frames));
  }
  Rng init = Rng(cfg.seed).split("video_init");
  m.video = models::make_video_adapter(m.cfg, m.video_cfg, init);
  const int clips = std::max(1, cfg.batch / F);
  Loop L{Variant::Rho, "video", &m.video, {&m.theta}, static_cast<int>(videos.items.size()), clips, {}, {}};
  L.batch = [&, F](const std::vector<int>& idx, Rng& rng) {
    Batch b;
    b.x0 = worldgen::stack_field(videos, idx, "video");
    b.pack.frames = F;
    b.pack.c_out = field_lists(videos, idx, false);
    if (m.video_cfg.first_frame) {
      std::vector<int> firsts;
      std::vector<float> flags;
      Rng r = rng.split("first_frame");
      for (std::size_t i = 0; i < idx.size(); ++i) {
        firsts.push_back(static_cast<int>(i) * F);
        flags.push_back(r.uniform() < cfg.first_frame_prob ? 1.0f : 0.0f);
      }
      const Tensor& x = b.x0;
      const int per = static_cast<int>(x.numel() / x.dim(0));
      Tensor f0 = num::reshape(num::gather(num::reshape(x, {x.dim(0), per}), firsts),
                               {static_cast<int>(idx.size()), x.dim(1), x.dim(2), x.dim(3)});
      b.pack.first_frame = models::first_frame_input(f0, flags);
    }
    return b;
  };
  L.grid = [&, F](const std::vector<int>& idx, Rng& rng) {
    Batch b = L.batch(idx, rng);
    const Tensor out = diffusion::ddim_sample(models::denoiser(Variant::Rho, m, b.pack), b.x0.shape(),
                                              diffusion::uniform_timesteps(cfg.grid_steps, sched.T), sched, rng);
    std::vector<std::vector<Tensor>> tiles;
    for (int c = 0; c < b.pack.clips(); ++c) {
      std::vector<Tensor> real, fake;
      for (int f = 0; f < F; ++f) {
        real.push_back(row(b.x0, c * F + f));
        fake.push_back(row(out, c * F + f));
      }
      tiles.push_back(real);
      tiles.push_back(fake);
    }
    return worldgen::tile_grid(tiles);
  };
  return run(L, m, sched, cfg);
}

}  // namespace fddlab::teachers
