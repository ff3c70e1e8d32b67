#include "fddlab/models/adapters.hpp"

#include <cmath>
#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"

namespace fddlab::models {

using namespace num;

namespace {

const char* kEncoderBlocks[] = {"enc1", "down1", "enc2", "down2", "mid"};

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

int site_channels(const BackboneConfig& cfg, int site) {
  return site == kEnc1 || site == kDec1 ? cfg.c1 : cfg.c2;
}

}  // namespace

ParamSet make_edit_adapter(const ParamSet& theta, const BackboneConfig& cfg, const EditAdapterConfig& ecfg,
                           Rng& rng) {
  ParamSet p("theta_edit");
  p.add("instr_emb", scale(randn({cfg.vocab, cfg.d}, rng), 0.5f));
  p.add("instr_cond.w", scale(linear_weight(cfg.d, cfg.d, rng), 0.1f));
  p.add("instr_cond.b", Tensor::zeros({cfg.d}));
  p.add("instr_map.w", linear_weight(ecfg.instr_channels, cfg.d, rng));
  p.add("instr_map.b", Tensor::zeros({ecfg.instr_channels}));

  // Fusion conv: the x_t slice copies the backbone input conv.
  const int cin = 2 * cfg.channels + ecfg.instr_channels;
  Tensor fuse = conv_weight(cfg.c1, cin, 3, rng);
  {
    const Tensor& src = theta.at("in_conv.w");
    auto dst = fuse.mutable_data();
    for (int o = 0; o < cfg.c1; ++o) {
      for (int i = 0; i < cfg.channels; ++i) {
        for (int k = 0; k < 9; ++k) dst[(o * cin + i) * 9 + k] = src.ptr()[(o * cfg.channels + i) * 9 + k];
      }
    }
  }
  p.add("fuse.w", fuse);
  p.add("fuse.b", theta.at("in_conv.b").clone());

  for (const auto& item : theta.items()) {
    for (const char* block : kEncoderBlocks) {
      if (starts_with(item.name, std::string(block) + ".")) p.add(item.name, item.tensor.clone());
    }
  }
  p.add("zc1.w", Tensor::zeros({cfg.c1, cfg.c1, 1, 1}));
  p.add("zc1.b", Tensor::zeros({cfg.c1}));
  p.add("zc2.w", Tensor::zeros({cfg.c2, cfg.c2, 1, 1}));
  p.add("zc2.b", Tensor::zeros({cfg.c2}));
  p.add("zcm.w", Tensor::zeros({cfg.c2, cfg.c2, 1, 1}));
  p.add("zcm.b", Tensor::zeros({cfg.c2}));
  p.set_trainable(false);
  return p;
}

EditResiduals edit_adapter_forward(const ParamSet& edit, const BackboneConfig& cfg, const Tensor& x_t,
                                   const Tensor& c_img, const Tensor& cond_rows,
                                   const std::vector<std::vector<int>>& instructions, int frames) {
  if (c_img.shape() != x_t.shape()) {
    throw ShapeError("edit adapter: c_img " + to_string(c_img.shape()) + " vs x_t " + to_string(x_t.shape()));
  }
  Weights w(edit);
  const int n = x_t.dim(0), h = x_t.dim(2), wd = x_t.dim(3);
  if (instructions.empty() || instructions.front().empty()) throw std::invalid_argument("edit adapter: empty instruction");
  Tensor e = mean_token_embedding(w("instr_emb"), instructions, "instruction");
  Tensor e_rows = repeat_rows(e, frames);
  if (e_rows.dim(0) != n) throw ShapeError("edit adapter: instructions do not cover " + to_string(x_t.shape()));
  Tensor cond = add(cond_rows, linear(e_rows, w("instr_cond.w"), w("instr_cond.b")));
  Tensor map = linear(e_rows, w("instr_map.w"), w("instr_map.b"));
  const int mc = map.dim(1);
  map = mul(reshape(map, {n, mc, 1, 1}), Tensor::full({1, 1, h, wd}, 1.0f));
  Tensor h0 = conv2d(concat({x_t, c_img, map}, 1), w("fuse.w"), w("fuse.b"), 1);
  EncoderOut enc = encode(w, cfg, h0, cond);
  EditResiduals r;
  r.s1 = conv2d(enc.s1, w("zc1.w"), w("zc1.b"), 1);
  r.s2 = conv2d(enc.s2, w("zc2.w"), w("zc2.b"), 1);
  r.mid = conv2d(enc.mid, w("zcm.w"), w("zcm.b"), 1);
  return r;
}

ParamSet make_video_adapter(const BackboneConfig& cfg, const VideoAdapterConfig& vcfg, Rng& rng) {
  ParamSet p("theta_video");
  for (int s = 0; s < kNumSites; ++s) {
    const int c = site_channels(cfg, s);
    const std::string pre = "t" + std::to_string(s) + ".";
    p.add(pre + "gn.g", Tensor::full({c}, 1.0f));
    p.add(pre + "gn.b", Tensor::zeros({c}));
    p.add(pre + "pos", scale(randn({vcfg.max_frames, c}, rng), 0.1f));
    p.add(pre + "cond.w", linear_weight(c, cfg.d, rng));
    p.add(pre + "cond.b", Tensor::zeros({c}));
    for (const char* m : {"q", "k", "v"}) {
      p.add(pre + m + ".w", linear_weight(c, c, rng));
      p.add(pre + m + ".b", Tensor::zeros({c}));
    }
    p.add(pre + "o.w", Tensor::zeros({c, c}));
    p.add(pre + "o.b", Tensor::zeros({c}));
    p.add(pre + "gn2.g", Tensor::full({c}, 1.0f));
    p.add(pre + "gn2.b", Tensor::zeros({c}));
    p.add(pre + "mlp1.w", conv_weight(2 * c, c, 3, rng));
    p.add(pre + "mlp1.b", Tensor::zeros({2 * c}));
    p.add(pre + "mlp2.w", Tensor::zeros({c, 2 * c, 1, 1}));
    p.add(pre + "mlp2.b", Tensor::zeros({c}));
  }
  if (vcfg.first_frame) {
    p.add("ff1.w", conv_weight(cfg.c1, cfg.channels + 1, 3, rng));
    p.add("ff1.b", Tensor::zeros({cfg.c1}));
    p.add("ff2.w", conv_weight(cfg.c2, cfg.c1, 3, rng));
    p.add("ff2.b", Tensor::zeros({cfg.c2}));
    p.add("ff3.w", conv_weight(cfg.c2, cfg.c2, 3, rng));
    p.add("ff3.b", Tensor::zeros({cfg.c2}));
  }
  return p;
}

Tensor first_frame_input(const Tensor& first_frames, const std::vector<float>& flags) {
  const int b = first_frames.dim(0), h = first_frames.dim(2), w = first_frames.dim(3);
  if (static_cast<int>(flags.size()) != b) throw ShapeError("first_frame_input: flag count mismatch");
  Tensor f = Tensor::from({b, 1, 1, 1}, flags);
  return concat({mul(first_frames, f), mul(Tensor::full({1, 1, h, w}, 1.0f), f)}, 1);
}

namespace {

// [B*F, C, H, W] -> [B*HW, F, C]
Tensor to_tokens(const Tensor& x, int frames) {
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), b = n / frames;
  return reshape(permute(reshape(x, {b, frames, c, hw}), {0, 3, 1, 2}), {b * hw, frames, c});
}

Tensor from_tokens(const Tensor& t, const Shape& like, int frames) {
  const int n = like[0], c = like[1], hw = like[2] * like[3], b = n / frames;
  return reshape(permute(reshape(t, {b, hw, frames, c}), {0, 2, 3, 1}), like);
}

}  // namespace

TemporalHook make_temporal_hook(const ParamSet& video, const BackboneConfig& cfg, const VideoAdapterConfig& vcfg,
                                int frames, const Tensor& first_frame, const Tensor& cond_rows) {
  if (frames > vcfg.max_frames) {
    throw ShapeError("video adapter: " + std::to_string(frames) + " frames exceeds " +
                     std::to_string(vcfg.max_frames));
  }
  // First-frame features per resolution, computed once per forward.
  auto ff = std::make_shared<std::vector<Tensor>>();
  if (vcfg.first_frame && first_frame.defined()) {
    Tensor f1 = silu(conv2d(first_frame, video.at("ff1.w"), video.at("ff1.b"), 1));
    Tensor f2 = silu(conv2d(f1, video.at("ff2.w"), video.at("ff2.b"), 2));
    Tensor f3 = conv2d(f2, video.at("ff3.w"), video.at("ff3.b"), 2);
    *ff = {f1, f2, f3};
  }
  const int groups = cfg.groups;
  return [&video, ff, frames, groups, cond_rows](int site, const Tensor& x) {
    const std::string pre = "t" + std::to_string(site) + ".";
    const int c = x.dim(1);
    const int n = x.dim(0);
    if (n % frames != 0) throw ShapeError("temporal layer: rows " + std::to_string(n) + " not a multiple of frames");
    Tensor tok = to_tokens(group_norm(x, groups, video.at(pre + "gn.g"), video.at(pre + "gn.b")), frames);
    tok = add(tok, slice(video.at(pre + "pos"), 0, 0, frames));
    if (cond_rows.defined()) {
      // Per-frame timestep and caption, shared by every pixel of a clip.
      const int b = n / frames, hw = x.dim(2) * x.dim(3);
      Tensor e = reshape(linear(silu(cond_rows), video.at(pre + "cond.w"), video.at(pre + "cond.b")), {b, 1, frames, c});
      tok = reshape(add(reshape(tok, {b, hw, frames, c}), e), {b * hw, frames, c});
    }
    // The first frame is added to every token and also offered as an extra
    // key/value so frames can copy from it.
    Tensor kv = tok;
    if (!ff->empty()) {
      const int level = site == kEnc1 || site == kDec1 ? 0 : (site == kMid ? 2 : 1);
      const Tensor& f = (*ff)[level];
      const int b = f.dim(0), hw = f.dim(2) * f.dim(3);
      const Tensor ref = reshape(permute(reshape(f, {b, c, hw}), {0, 2, 1}), {b * hw, 1, c});
      tok = add(tok, ref);
      kv = concat({tok, ref}, 1);
    }
    Tensor q = linear(tok, video.at(pre + "q.w"), video.at(pre + "q.b"));
    Tensor k = linear(kv, video.at(pre + "k.w"), video.at(pre + "k.b"));
    Tensor v = linear(kv, video.at(pre + "v.w"), video.at(pre + "v.b"));
    Tensor att = softmax(scale(bmm(q, k, true), 1.0f / std::sqrt(static_cast<float>(c))), -1);
    Tensor o = linear(bmm(att, v), video.at(pre + "o.w"), video.at(pre + "o.b"));
    Tensor h = add(x, from_tokens(o, x.shape(), frames));
    Tensor m = group_norm(h, groups, video.at(pre + "gn2.g"), video.at(pre + "gn2.b"));
    m = conv2d(silu(conv2d(m, video.at(pre + "mlp1.w"), video.at(pre + "mlp1.b"), 1)), video.at(pre + "mlp2.w"),
               video.at(pre + "mlp2.b"), 1);
    return add(h, m);
  };
}

std::vector<std::string> lora_targets(const ParamSet& theta) {
  std::vector<std::string> out;
  for (const auto& item : theta.items()) {
    const auto& n = item.name;
    if (n.size() > 2 && n.compare(n.size() - 2, 2, ".w") == 0 && (item.tensor.rank() == 2 || item.tensor.rank() == 4)) {
      out.push_back(n);
    }
  }
  return out;
}

ParamSet make_lora(const ParamSet& theta, const LoraConfig& cfg, Rng& rng) {
  if (cfg.rank < 1) throw std::invalid_argument("lora rank must be >= 1");
  ParamSet p("theta_align");
  for (const auto& name : lora_targets(theta)) {
    const Tensor& w = theta.at(name);
    const int out = w.dim(0);
    const int in = static_cast<int>(w.numel() / out);
    p.add(name + ".A", linear_weight(cfg.rank, in, rng));
    p.add(name + ".B", Tensor::zeros({out, cfg.rank}));
  }
  return p;
}

}  // namespace fddlab::models
