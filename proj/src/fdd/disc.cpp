#include "fddlab/fdd/disc.hpp"

#include <cmath>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"

namespace fddlab::fdd {

using namespace num;

namespace {

void add_linear(ParamSet& p, const std::string& name, int out, int in, Rng& rng, bool bias = true) {
  p.add(name + ".w", models::linear_weight(out, in, rng));
  if (bias) p.add(name + ".b", Tensor::zeros({out}));
}

Tensor lin(const ParamSet& p, const std::string& name, const Tensor& x) {
  return linear(x, p.at(name + ".w"), p.has(name + ".b") ? p.at(name + ".b") : Tensor());
}

void add_attention(ParamSet& p, const std::string& name, int d, Rng& rng) {
  add_linear(p, name + ".q", d, d, rng, false);
  add_linear(p, name + ".k", d, d, rng, false);
  add_linear(p, name + ".v", d, d, rng, false);
  add_linear(p, name + ".o", d, d, rng);
}

// q [B,M,D] attends over kv [B,L,D]; residual on q.
Tensor attend(const ParamSet& p, const std::string& name, const Tensor& q_in, const Tensor& kv) {
  const int d = q_in.dim(2);
  Tensor q = lin(p, name + ".q", q_in), k = lin(p, name + ".k", kv), v = lin(p, name + ".v", kv);
  Tensor a = softmax(scale(bmm(q, k, true), 1.0f / std::sqrt(static_cast<float>(d))), 2);
  return add(q_in, lin(p, name + ".o", bmm(a, v)));
}

void add_head(ParamSet& p, int d, Rng& rng) {
  add_linear(p, "head1", d, d, rng);
  add_linear(p, "head2", 1, d, rng);
}

Tensor head(const ParamSet& p, const Tensor& pooled) {
  Tensor s = lin(p, "head2", silu(lin(p, "head1", pooled)));
  return reshape(s, {s.dim(0)});
}

// [N,C,h,w] -> [N, h*w, C]
Tensor pixels_last(const Tensor& f) {
  return permute(reshape(f, {f.dim(0), f.dim(1), f.dim(2) * f.dim(3)}), {0, 2, 1});
}

}  // namespace

ParamSet make_edit_disc(const models::BackboneConfig& cfg, const DiscConfig& dcfg, Rng& rng) {
  ParamSet p("D_e");
  const int d = dcfg.width;
  add_linear(p, "cand", d, cfg.c2, rng);
  add_linear(p, "input", d, cfg.c2, rng);
  p.add("instr_emb", scale(randn({cfg.vocab, d}, rng), 0.1f));
  add_attention(p, "attn", d, rng);
  add_head(p, d, rng);
  return p;
}

ParamSet make_video_disc(const models::BackboneConfig& cfg, const DiscConfig& dcfg, Rng& rng) {
  ParamSet p("D_v");
  const int d = dcfg.width;
  add_linear(p, "feat", d, cfg.c2, rng);
  p.add("cap_emb", scale(randn({cfg.vocab, d}, rng), 0.1f));
  p.add("pos", scale(randn({16, d}, rng), 0.1f));
  add_attention(p, "tattn", d, rng);
  add_head(p, d, rng);
  return p;
}

Tensor edit_disc_scores(const ParamSet& disc, const ParamSet& theta, const models::BackboneConfig& cfg,
                        const Tensor& candidate, const Tensor& input,
                        const std::vector<std::vector<int>>& instructions, int frames) {
  if (candidate.shape() != input.shape()) {
    throw ShapeError("D_e: candidate " + to_string(candidate.shape()) + " vs input " + to_string(input.shape()));
  }
  const int n = candidate.dim(0);
  if (n != static_cast<int>(instructions.size()) * frames) {
    throw ShapeError("D_e: " + std::to_string(n) + " frames for " + std::to_string(instructions.size()) +
                     " instructions x " + std::to_string(frames));
  }
  Tensor c = lin(disc, "cand", pixels_last(models::feature_net(theta, cfg, candidate)));
  Tensor i = lin(disc, "input", pixels_last(models::feature_net(theta, cfg, input)));
  Tensor ins = models::repeat_rows(models::mean_token_embedding(disc.at("instr_emb"), instructions, "instruction"),
                                   frames);
  ins = reshape(ins, {n, 1, ins.dim(1)});
  Tensor h = attend(disc, "attn", c, concat({c, i, ins}, 1));
  return head(disc, mean_axis(h, 1));
}

Tensor video_disc_scores(const ParamSet& disc, const ParamSet& theta, const models::BackboneConfig& cfg,
                         const Tensor& video, const std::vector<std::vector<int>>& captions, int frames) {
  const int b = static_cast<int>(captions.size());
  if (video.dim(0) != b * frames) {
    throw ShapeError("D_v: " + std::to_string(video.dim(0)) + " frames for " + std::to_string(b) + " clips x " +
                     std::to_string(frames));
  }
  if (frames > disc.at("pos").dim(0)) throw ShapeError("D_v: clip longer than the position table");
  Tensor f = lin(disc, "feat", pixels_last(models::feature_net(theta, cfg, video)));  // [B*F, P, D]
  const int P = f.dim(1), d = f.dim(2);
  f = permute(reshape(f, {b, frames, P, d}), {0, 2, 1, 3});  // [B, P, F, D]
  Tensor cap = reshape(models::mean_token_embedding(disc.at("cap_emb"), captions, "caption"), {b, 1, 1, d});
  Tensor pos = reshape(slice(disc.at("pos"), 0, 0, frames), {1, 1, frames, d});
  f = reshape(add(add(f, cap), pos), {b * P, frames, d});
  Tensor h = attend(disc, "tattn", f, f);
  return head(disc, mean_axis(reshape(h, {b, P * frames, d}), 1));
}

Tensor hinge_d_loss(const Tensor& real_scores, const Tensor& fake_scores) {
  if (real_scores.shape() != fake_scores.shape()) {
    throw ShapeError("hinge: real " + to_string(real_scores.shape()) + " vs fake " + to_string(fake_scores.shape()));
  }
  return add(mean(relu(add_scalar(scale(real_scores, -1.0f), 1.0f))), mean(relu(add_scalar(fake_scores, 1.0f))));
}

Tensor hinge_g_loss(const Tensor& fake_scores, GLossForm form) {
  if (form == GLossForm::Paper) return scale(mean(relu(add_scalar(fake_scores, 1.0f))), -1.0f);
  return scale(mean(fake_scores), -1.0f);
}

}  // namespace fddlab::fdd
