#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fddlab/models/params.hpp"

namespace fddlab::models {

struct BackboneConfig {
  int channels = 3;
  int c1 = 32;
  int c2 = 64;
  int d = 64;  // conditioning width
  int vocab = 64;
  int groups = 8;
};

/// Effective-weight lookup for one forward pass. With a LoRA set attached,
/// every name that has "<name>.A"/"<name>.B" factors resolves to
/// W + scale * reshape(B A).
class Weights {
 public:
  explicit Weights(const ParamSet& base, const ParamSet* lora = nullptr, float lora_scale = 1.0f)
      : base_(base), lora_(lora), scale_(lora_scale) {}
  Tensor operator()(const std::string& name) const;
  const ParamSet& base() const { return base_; }

 private:
  const ParamSet& base_;
  const ParamSet* lora_;
  float scale_;
  mutable std::unordered_map<std::string, Tensor> cache_;
};

ParamSet make_backbone(const BackboneConfig& cfg, num::Rng& rng);

/// Mean row of `table` per token list; empty lists embed to zero. Tokens
/// outside the table are rejected.
Tensor mean_token_embedding(const Tensor& table, const std::vector<std::vector<int>>& tokens, const char* what);
Tensor caption_embedding(const Weights& w, const std::vector<std::vector<int>>& captions);
Tensor sinusoidal(const std::vector<int>& t, int d);
Tensor timestep_embedding(const Weights& w, const BackboneConfig& cfg, const std::vector<int>& t);
/// Repeats per-clip rows [B,...] to [B*group,...].
Tensor repeat_rows(const Tensor& per_clip, int group);

// Residual block with FiLM from the conditioning rows.
Tensor res_block(const Weights& w, const std::string& p, const Tensor& x, const Tensor& cond_rows, int groups);

/// Temporal hook sites, in execution order.
enum Site { kEnc1 = 0, kEnc2 = 1, kMid = 2, kDec2 = 3, kDec1 = 4, kNumSites = 5 };

struct EncoderOut {
  Tensor s1, s2, mid;
};

/// enc1 -> down1 -> enc2 -> down2 -> mid starting from in-conv features.
/// `temporal` (optional) is applied after enc1, enc2 and mid.
using TemporalHook = std::function<Tensor(int site, const Tensor& h)>;
EncoderOut encode(const Weights& w, const BackboneConfig& cfg, const Tensor& h0, const Tensor& cond_rows,
                  const TemporalHook& temporal = {});

struct Hooks {
  Tensor res_s1, res_s2, res_mid;  // edit-adapter residuals (optional)
  TemporalHook temporal;
};

/// Per-row v-prediction. x is [N,C,H,W]; cond_rows [N,d].
Tensor backbone_forward(const Weights& w, const BackboneConfig& cfg, const Tensor& x, const Tensor& cond_rows,
                        const Hooks& hooks = {});

/// Conditioning rows for N = clips * frames rows: temb(t) + caption.
Tensor backbone_cond(const Weights& w, const BackboneConfig& cfg, const std::vector<int>& t,
                     const std::vector<std::vector<int>>& captions, int frames);

/// Frozen feature network: encoder output at t = 1 with no caption,
/// enc2 features [N, c2, H/2, W/2].
Tensor feature_net(const ParamSet& theta, const BackboneConfig& cfg, const Tensor& frames);

}  // namespace fddlab::models
