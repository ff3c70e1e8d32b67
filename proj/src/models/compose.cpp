#include "fddlab/models/compose.hpp"

#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::models {

using namespace num;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Backbone: return "backbone";
    case Variant::Psi: return "psi";
    case Variant::Rho: return "rho";
    case Variant::Eta: return "eta";
    case Variant::Phi: return "phi";
  }
  return "?";
}

ModelSet make_model_set(const BackboneConfig& cfg, const EditAdapterConfig& ecfg, const VideoAdapterConfig& vcfg,
                        const LoraConfig& lcfg, Rng& rng) {
  ModelSet m;
  m.cfg = cfg;
  m.edit_cfg = ecfg;
  m.video_cfg = vcfg;
  m.lora_cfg = lcfg;
  Rng r_theta = rng.split("theta"), r_edit = rng.split("edit"), r_video = rng.split("video"),
      r_lora = rng.split("lora");
  m.theta = make_backbone(cfg, r_theta);
  m.edit = make_edit_adapter(m.theta, cfg, ecfg, r_edit);
  m.video = make_video_adapter(cfg, vcfg, r_video);
  m.lora = make_lora(m.theta, lcfg, r_lora);
  return m;
}

namespace {

void require(bool ok, Variant v, const char* what) {
  if (!ok) throw std::invalid_argument(to_string(v) + ": missing " + what);
}

}  // namespace

Tensor compose_forward(Variant v, const ModelSet& m, const Tensor& x_t, const std::vector<int>& t,
                       const ConditionPack& pack) {
  const bool edit = v == Variant::Psi || v == Variant::Eta || v == Variant::Phi;
  const bool video = v == Variant::Rho || v == Variant::Eta || v == Variant::Phi;
  require(!pack.c_out.empty(), v, "c_out");
  if (edit) {
    require(pack.c_instruct.size() == pack.c_out.size(), v, "c_instruct");
    require(pack.c_vid.defined(), v, v == Variant::Psi ? "c_img" : "c_vid");
  }
  if (x_t.dim(0) != pack.clips() * pack.frames) {
    throw ShapeError(to_string(v) + ": x_t " + num::to_string(x_t.shape()) + " holds " +
                     std::to_string(x_t.dim(0)) + " rows for " + std::to_string(pack.clips()) + " clips x " +
                     std::to_string(pack.frames) + " frames");
  }
  Weights w = v == Variant::Phi ? Weights(m.theta, &m.lora, m.lora_cfg.scale()) : Weights(m.theta);
  Tensor cond = backbone_cond(w, m.cfg, t, pack.c_out, pack.frames);
  Hooks hooks;
  if (edit) {
    EditResiduals r = edit_adapter_forward(m.edit, m.cfg, x_t, pack.c_vid, cond, pack.c_instruct, pack.frames);
    hooks.res_s1 = r.s1;
    hooks.res_s2 = r.s2;
    hooks.res_mid = r.mid;
  }
  if (video) hooks.temporal = make_temporal_hook(m.video, m.cfg, m.video_cfg, pack.frames, pack.first_frame, cond);
  return backbone_forward(w, m.cfg, x_t, cond, hooks);
}

diffusion::DenoiseFn denoiser(Variant v, const ModelSet& m, const ConditionPack& pack) {
  return [v, &m, &pack](const Tensor& x, int t) {
    return compose_forward(v, m, x, std::vector<int>(pack.clips(), t), pack);
  };
}

Tensor sample_variant(Variant v, const ModelSet& m, const ConditionPack& pack, const std::vector<int>& steps,
                      const diffusion::NoiseSchedule& sched, Rng& rng) {
  const int n = pack.clips() * pack.frames;
  const int h = pack.c_vid.defined() ? pack.c_vid.dim(2) : 0;
  if (h == 0 && !pack.first_frame.defined()) {
    throw std::invalid_argument(to_string(v) + ": sampling needs c_vid or a first frame to fix the frame size");
  }
  const Tensor& like = pack.c_vid.defined() ? pack.c_vid : pack.first_frame;
  return diffusion::ddim_sample(denoiser(v, m, pack), {n, m.cfg.channels, like.dim(2), like.dim(3)}, steps, sched,
                                rng);
}

Tensor psi_first_frames(const ModelSet& m, const ConditionPack& pack, const std::vector<int>& steps,
                        const diffusion::NoiseSchedule& sched, Rng& rng) {
  const int b = pack.clips();
  std::vector<int> rows(b);
  for (int i = 0; i < b; ++i) rows[i] = i * pack.frames;
  const Tensor& v = pack.c_vid;
  const int per = static_cast<int>(v.numel() / v.dim(0));
  Tensor firsts = reshape(gather(reshape(v, {v.dim(0), per}), rows), {b, v.dim(1), v.dim(2), v.dim(3)});
  ConditionPack p;
  p.frames = 1;
  p.c_out = pack.c_out;
  p.c_instruct = pack.c_instruct;
  p.c_vid = firsts;
  return sample_variant(Variant::Psi, m, p, steps, sched, rng);
}

Tensor edit_longer_video(Variant v, const ModelSet& m, const Tensor& video, const std::vector<int>& c_out,
                         const std::vector<int>& c_instruct, int window, const std::vector<int>& steps,
                         const diffusion::NoiseSchedule& sched, Rng& rng) {
  const int total = video.dim(0);
  if (window < 1 || total < window) {
    throw std::invalid_argument("edit_longer_video: " + std::to_string(total) + " frames is shorter than the " +
                                std::to_string(window) + "-frame window; use the direct path");
  }
  const bool use_first = m.video_cfg.first_frame;
  Tensor prev_last;
  std::vector<Tensor> pieces;
  int done = 0;
  for (int w = 0; done < total; ++w) {
    const int start = std::min(done, total - window);
    ConditionPack pack;
    pack.frames = window;
    pack.c_out = {c_out};
    pack.c_instruct = {c_instruct};
    pack.c_vid = slice(video, 0, start, window);
    if (use_first) {
      Rng r_first = rng.split("first" + std::to_string(w));
      Tensor first = w == 0 ? psi_first_frames(m, pack, steps, sched, r_first) : prev_last;
      pack.first_frame = first_frame_input(first, {1.0f});
    }
    Rng r_win = rng.split(static_cast<std::uint64_t>(w));
    Tensor out = sample_variant(v, m, pack, steps, sched, r_win);
    const int keep_from = done - start;
    pieces.push_back(slice(out, 0, keep_from, window - keep_from));
    prev_last = slice(out, 0, window - 1, 1);
    done = start + window;
  }
  return concat(std::span<const Tensor>(pieces), 0);
}

namespace {

Tensor arch_tensor(const ModelSet& m) {
  return Tensor::from({11}, {float(m.cfg.channels), float(m.cfg.c1), float(m.cfg.c2), float(m.cfg.d),
                             float(m.cfg.vocab), float(m.cfg.groups), float(m.edit_cfg.instr_channels),
                             float(m.video_cfg.max_frames), m.video_cfg.first_frame ? 1.0f : 0.0f,
                             float(m.lora_cfg.rank), m.lora_cfg.alpha});
}

}  // namespace

void save_model_set(const std::filesystem::path& dir, const ModelSet& m, const diffusion::NoiseSchedule& sched,
                    const std::vector<const ParamSet*>& extra) {
  std::vector<double> ab = sched.alpha_bar;
  std::vector<float> abf(ab.begin(), ab.end());
  std::vector<NamedTensor> meta{
      {"arch", arch_tensor(m)},
      {"schedule.header",
       Tensor::from({3}, {float(sched.T), sched.kind == diffusion::ScheduleKind::Linear ? 0.0f : 1.0f,
                          sched.zero_terminal ? 1.0f : 0.0f})},
      {"schedule.alpha_bar", Tensor::from({sched.T + 1}, std::move(abf))}};
  std::vector<const ParamSet*> sets{&m.theta, &m.edit, &m.video, &m.lora};
  sets.insert(sets.end(), extra.begin(), extra.end());
  save_checkpoint(dir, sets, meta);
}

LoadedModel load_model_set(const std::filesystem::path& dir) {
  LoadedModel out;
  out.raw = load_checkpoint(dir);
  auto meta = [&](const std::string& name) {
    auto it = out.raw.meta.find(name);
    if (it == out.raw.meta.end()) throw MissingDependency((dir / ("meta__" + name + ".fdt")).string());
    return it->second;
  };
  const Tensor arch = meta("arch");
  const float* a = arch.ptr();
  ModelSet& m = out.model;
  m.cfg = {int(a[0]), int(a[1]), int(a[2]), int(a[3]), int(a[4]), int(a[5])};
  m.edit_cfg.instr_channels = int(a[6]);
  m.video_cfg.max_frames = int(a[7]);
  m.video_cfg.first_frame = a[8] != 0.0f;
  m.lora_cfg.rank = int(a[9]);
  m.lora_cfg.alpha = a[10];
  const Tensor hdr = meta("schedule.header");
  out.sched = diffusion::make_schedule(int(hdr.ptr()[0]),
                                       hdr.ptr()[1] == 0.0f ? diffusion::ScheduleKind::Linear
                                                            : diffusion::ScheduleKind::Cosine,
                                       hdr.ptr()[2] != 0.0f);
  m.theta = out.raw.get("theta", dir);
  Rng rng(0);
  auto pick = [&](const char* tag, ParamSet fallback) {
    auto it = out.raw.sets.find(tag);
    return it == out.raw.sets.end() ? std::move(fallback) : it->second;
  };
  m.edit = pick("theta_edit", make_edit_adapter(m.theta, m.cfg, m.edit_cfg, rng));
  m.video = pick("theta_video", make_video_adapter(m.cfg, m.video_cfg, rng));
  m.lora = pick("theta_align", make_lora(m.theta, m.lora_cfg, rng));
  for (ParamSet* s : {&m.theta, &m.edit, &m.video, &m.lora}) s->set_trainable(false);
  return out;
}

}  // namespace fddlab::models
