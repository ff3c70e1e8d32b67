#include "fddlab/models/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"

namespace fddlab::models {

using namespace num;

Tensor Weights::operator()(const std::string& name) const {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  Tensor w = base_.at(name);
  if (lora_ && lora_->has(name + ".A")) {
    const Tensor& a = lora_->at(name + ".A");
    const Tensor& b = lora_->at(name + ".B");
    if (a.dim(0) != b.dim(1)) {
      throw ShapeError("lora rank mismatch for " + name + ": A " + to_string(a.shape()) + " B " + to_string(b.shape()));
    }
    w = add(w, reshape(scale(matmul(b, a), scale_), w.shape()));
  }
  cache_.emplace(name, w);
  return w;
}

namespace {

void add_conv(ParamSet& p, const std::string& name, int co, int ci, int k, Rng& rng) {
  p.add(name + ".w", conv_weight(co, ci, k, rng));
  p.add(name + ".b", Tensor::zeros({co}));
}

void add_linear(ParamSet& p, const std::string& name, int out, int in, Rng& rng) {
  p.add(name + ".w", linear_weight(out, in, rng));
  p.add(name + ".b", Tensor::zeros({out}));
}

void add_gn(ParamSet& p, const std::string& name, int c) {
  p.add(name + ".g", Tensor::full({c}, 1.0f));
  p.add(name + ".b", Tensor::zeros({c}));
}

void add_res_block(ParamSet& p, const std::string& name, int c, int d, Rng& rng) {
  add_gn(p, name + ".gn1", c);
  add_conv(p, name + ".conv1", c, c, 3, rng);
  add_gn(p, name + ".gn2", c);
  // FiLM starts small so blocks begin close to unmodulated.
  Tensor& film = p.add(name + ".film.w", linear_weight(2 * c, d, rng));
  for (float& v : film.mutable_data()) v *= 0.1f;
  p.add(name + ".film.b", Tensor::zeros({2 * c}));
  add_conv(p, name + ".conv2", c, c, 3, rng);
}

Tensor conv(const Weights& w, const std::string& name, const Tensor& x, int stride = 1) {
  return conv2d(x, w(name + ".w"), w(name + ".b"), stride);
}

Tensor gn(const Weights& w, const std::string& name, const Tensor& x, int groups) {
  return group_norm(x, groups, w(name + ".g"), w(name + ".b"));
}

}  // namespace

ParamSet make_backbone(const BackboneConfig& cfg, Rng& rng) {
  ParamSet p("theta");
  p.add("tok_emb", scale(randn({cfg.vocab, cfg.d}, rng), 0.5f));
  add_linear(p, "temb1", cfg.d, cfg.d, rng);
  add_linear(p, "temb2", cfg.d, cfg.d, rng);
  add_conv(p, "in_conv", cfg.c1, cfg.channels, 3, rng);
  add_res_block(p, "enc1", cfg.c1, cfg.d, rng);
  add_conv(p, "down1", cfg.c2, cfg.c1, 3, rng);
  add_res_block(p, "enc2", cfg.c2, cfg.d, rng);
  add_conv(p, "down2", cfg.c2, cfg.c2, 3, rng);
  add_res_block(p, "mid", cfg.c2, cfg.d, rng);
  add_conv(p, "dec2_in", cfg.c2, 2 * cfg.c2, 3, rng);
  add_res_block(p, "dec2", cfg.c2, cfg.d, rng);
  add_conv(p, "dec1_in", cfg.c1, cfg.c2 + cfg.c1, 3, rng);
  add_res_block(p, "dec1", cfg.c1, cfg.d, rng);
  add_gn(p, "out_gn", cfg.c1);
  add_conv(p, "out_conv", cfg.channels, cfg.c1, 3, rng);
  return p;
}

Tensor mean_token_embedding(const Tensor& table, const std::vector<std::vector<int>>& tokens, const char* what) {
  const int b = static_cast<int>(tokens.size());
  const int vocab = table.dim(0);
  std::size_t total = 0;
  for (const auto& c : tokens) total += c.size();
  if (total == 0) return Tensor::zeros({b, table.dim(1)});
  std::vector<int> ids;
  std::vector<float> avg(static_cast<std::size_t>(b) * total, 0.0f);
  std::size_t col = 0;
  for (int i = 0; i < b; ++i) {
    for (int tok : tokens[i]) {
      if (tok < 0 || tok >= vocab) {
        throw std::invalid_argument("unknown " + std::string(what) + " token " + std::to_string(tok) +
                                    " (vocabulary " + std::to_string(vocab) + ")");
      }
      ids.push_back(tok);
      avg[i * total + col++] = 1.0f / static_cast<float>(tokens[i].size());
    }
  }
  return matmul(Tensor::from({b, static_cast<int>(total)}, std::move(avg)), gather(table, ids));
}

Tensor caption_embedding(const Weights& w, const std::vector<std::vector<int>>& captions) {
  return mean_token_embedding(w("tok_emb"), captions, "caption");
}

Tensor sinusoidal(const std::vector<int>& t, int d) {
  const int b = static_cast<int>(t.size()), half = d / 2;
  std::vector<float> v(static_cast<std::size_t>(b) * d, 0.0f);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      v[i * d + j] = static_cast<float>(std::sin(t[i] * freq));
      v[i * d + half + j] = static_cast<float>(std::cos(t[i] * freq));
    }
  }
  return Tensor::from({b, d}, std::move(v));
}

Tensor timestep_embedding(const Weights& w, const BackboneConfig& cfg, const std::vector<int>& t) {
  Tensor h = silu(linear(sinusoidal(t, cfg.d), w("temb1.w"), w("temb1.b")));
  return linear(h, w("temb2.w"), w("temb2.b"));
}

Tensor repeat_rows(const Tensor& per_clip, int group) {
  if (group == 1) return per_clip;
  std::vector<int> idx(static_cast<std::size_t>(per_clip.dim(0)) * group);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i) / group;
  Shape flat{per_clip.dim(0), static_cast<int>(per_clip.numel() / per_clip.dim(0))};
  Shape out = per_clip.shape();
  out[0] *= group;
  return reshape(gather(reshape(per_clip, flat), idx), out);
}

Tensor backbone_cond(const Weights& w, const BackboneConfig& cfg, const std::vector<int>& t,
                     const std::vector<std::vector<int>>& captions, int frames) {
  if (t.size() != captions.size()) {
    throw ShapeError("backbone_cond: " + std::to_string(t.size()) + " timesteps for " +
                     std::to_string(captions.size()) + " captions");
  }
  return repeat_rows(add(timestep_embedding(w, cfg, t), caption_embedding(w, captions)), frames);
}

Tensor res_block(const Weights& w, const std::string& p, const Tensor& x, const Tensor& cond_rows, int groups) {
  const int c = x.dim(1);
  Tensor h = conv(w, p + ".conv1", silu(gn(w, p + ".gn1", x, groups)));
  Tensor film = linear(silu(cond_rows), w(p + ".film.w"), w(p + ".film.b"));
  const int n = x.dim(0);
  Tensor sc = reshape(slice(film, 1, 0, c), {n, c, 1, 1});
  Tensor sh = reshape(slice(film, 1, c, c), {n, c, 1, 1});
  h = gn(w, p + ".gn2", h, groups);
  h = add(add(h, mul(h, sc)), sh);
  h = conv(w, p + ".conv2", silu(h));
  return add(x, h);
}

EncoderOut encode(const Weights& w, const BackboneConfig& cfg, const Tensor& h0, const Tensor& cond_rows,
                  const TemporalHook& temporal) {
  auto mix = [&](int site, Tensor h) { return temporal ? temporal(site, h) : h; };
  EncoderOut e;
  e.s1 = mix(kEnc1, res_block(w, "enc1", h0, cond_rows, cfg.groups));
  Tensor h = conv(w, "down1", e.s1, 2);
  e.s2 = mix(kEnc2, res_block(w, "enc2", h, cond_rows, cfg.groups));
  h = conv(w, "down2", e.s2, 2);
  e.mid = mix(kMid, res_block(w, "mid", h, cond_rows, cfg.groups));
  return e;
}

Tensor backbone_forward(const Weights& w, const BackboneConfig& cfg, const Tensor& x, const Tensor& cond_rows,
                        const Hooks& hooks) {
  if (x.rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ShapeError("backbone_forward: expected [N," + std::to_string(cfg.channels) +
                     ",H,W] with H, W divisible by 4, got " + to_string(x.shape()));
  }
  if (cond_rows.dim(0) != x.dim(0)) {
    throw ShapeError("backbone_forward: cond " + to_string(cond_rows.shape()) + " vs x " + to_string(x.shape()));
  }
  auto mix = [&](int site, Tensor h) { return hooks.temporal ? hooks.temporal(site, h) : h; };
  auto plus = [](const Tensor& a, const Tensor& r) { return r.defined() ? add(a, r) : a; };
  EncoderOut e = encode(w, cfg, conv(w, "in_conv", x), cond_rows, hooks.temporal);
  Tensor s1 = plus(e.s1, hooks.res_s1);
  Tensor s2 = plus(e.s2, hooks.res_s2);
  Tensor h = plus(e.mid, hooks.res_mid);
  h = conv(w, "dec2_in", concat({upsample2x(h), s2}, 1));
  h = mix(kDec2, res_block(w, "dec2", h, cond_rows, cfg.groups));
  h = conv(w, "dec1_in", concat({upsample2x(h), s1}, 1));
  h = mix(kDec1, res_block(w, "dec1", h, cond_rows, cfg.groups));
  return conv(w, "out_conv", silu(gn(w, "out_gn", h, cfg.groups)));
}

Tensor feature_net(const ParamSet& theta, const BackboneConfig& cfg, const Tensor& frames) {
  Weights w(theta);
  const int n = frames.dim(0);
  std::vector<std::vector<int>> none(n);
  Tensor cond = backbone_cond(w, cfg, std::vector<int>(n, 1), none, 1);
  Tensor h = conv(w, "in_conv", frames);
  h = res_block(w, "enc1", h, cond, cfg.groups);
  h = conv(w, "down1", h, 2);
  return res_block(w, "enc2", h, cond, cfg.groups);
}

}  // namespace fddlab::models
