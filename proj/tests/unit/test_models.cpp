#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fddlab/errors.hpp"
#include "fddlab/models/compose.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

using namespace fddlab;
using namespace fddlab::models;
using num::Tensor;

namespace {

ModelSet small_models(std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.c1 = 16;
  cfg.c2 = 32;
  cfg.d = 32;
  cfg.vocab = 40;
  num::Rng rng(seed);
  return make_model_set(cfg, {}, {}, {}, rng);
}

ConditionPack pack_for(int clips, int frames, num::Rng& rng) {
  ConditionPack p;
  p.frames = frames;
  for (int i = 0; i < clips; ++i) {
    p.c_out.push_back({rng.uniform_int(0, 39), rng.uniform_int(0, 39), rng.uniform_int(0, 39)});
    p.c_instruct.push_back({rng.uniform_int(0, 39), rng.uniform_int(0, 39)});
  }
  p.c_vid = num::rand_uniform({clips * frames, 3, 8, 8}, rng, -1, 1);
  return p;
}

// Randomizes a set in place (used to move adapters off their identity inits).
void perturb(ParamSet& s, num::Rng& rng, float amp) {
  for (const auto& item : s.items()) {
    Tensor t = item.tensor;
    for (float& v : t.mutable_data()) v += static_cast<float>(amp * (rng.uniform() * 2 - 1));
  }
}

Tensor permute_rows(const Tensor& x, const std::vector<int>& order) {
  const int per = static_cast<int>(x.numel() / x.dim(0));
  return num::reshape(num::gather(num::reshape(x, {x.dim(0), per}), order), x.shape());
}

}  // namespace

TEST_CASE("backbone: zero output conv gives zeros") {
  auto m = small_models(1);
  for (const char* n : {"out_conv.w", "out_conv.b"}) {
    Tensor t = m.theta.at(n);
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f);
  }
  num::Rng rng(2);
  auto p = pack_for(2, 1, rng);
  Tensor out = compose_forward(Variant::Backbone, m, num::randn({2, 3, 8, 8}, rng), {5, 9}, p);
  for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("backbone: frames are processed independently") {
  auto m = small_models(3);
  num::Rng rng(4);
  auto p = pack_for(1, 4, rng);
  Tensor x = num::randn({4, 3, 8, 8}, rng);
  const std::vector<int> order{2, 0, 3, 1};
  Tensor a = permute_rows(compose_forward(Variant::Backbone, m, x, {7}, p), order);
  Tensor b = compose_forward(Variant::Backbone, m, permute_rows(x, order), {7}, p);
  CHECK(num::max_abs_diff(a, b) < 1e-5);
  CHECK(a.shape() == x.shape());
}

TEST_CASE("zero-init identities hold bit-exactly") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto m = small_models(seed);
    num::Rng rng(seed * 7);
    auto p = pack_for(2, 3, rng);
    p.first_frame = first_frame_input(num::randn({2, 3, 8, 8}, rng), {1.0f, 0.0f});
    Tensor x = num::randn({6, 3, 8, 8}, rng);
    const std::vector<int> t{3, 17};
    Tensor base = compose_forward(Variant::Backbone, m, x, t, p);
    CHECK(num::bit_equal(compose_forward(Variant::Psi, m, x, t, p), base));
    CHECK(num::bit_equal(compose_forward(Variant::Rho, m, x, t, p), base));
    // Move both adapters off identity; phi must still equal eta while B = 0.
    perturb(m.edit, rng, 0.05f);
    perturb(m.video, rng, 0.05f);
    Tensor eta = compose_forward(Variant::Eta, m, x, t, p);
    CHECK_FALSE(num::bit_equal(eta, base));
    CHECK(num::bit_equal(compose_forward(Variant::Phi, m, x, t, p), eta));
  }
}

TEST_CASE("psi is frame-permutation equivariant, rho is not") {
  auto m = small_models(21);
  num::Rng rng(22);
  perturb(m.edit, rng, 0.05f);
  perturb(m.video, rng, 0.05f);
  auto p = pack_for(1, 4, rng);
  Tensor x = num::randn({4, 3, 8, 8}, rng);
  const std::vector<int> order{3, 1, 0, 2};
  auto q = p;
  q.c_vid = permute_rows(p.c_vid, order);
  Tensor a = permute_rows(compose_forward(Variant::Psi, m, x, {9}, p), order);
  Tensor b = compose_forward(Variant::Psi, m, permute_rows(x, order), {9}, q);
  CHECK(num::max_abs_diff(a, b) < 1e-5);
  Tensor c = permute_rows(compose_forward(Variant::Rho, m, x, {9}, p), order);
  Tensor d = compose_forward(Variant::Rho, m, permute_rows(x, order), {9}, q);
  CHECK(num::max_abs_diff(c, d) > 1e-4);
}

TEST_CASE("missing conditions name the variant") {
  auto m = small_models(5);
  num::Rng rng(6);
  auto p = pack_for(1, 2, rng);
  Tensor x = num::randn({2, 3, 8, 8}, rng);
  auto no_instr = p;
  no_instr.c_instruct.clear();
  try {
    compose_forward(Variant::Eta, m, x, {4}, no_instr);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("eta") != std::string::npos);
  }
  auto no_img = p;
  no_img.c_vid = Tensor();
  try {
    compose_forward(Variant::Psi, m, x, {4}, no_img);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("psi: missing c_img") != std::string::npos);
  }
  auto no_out = p;
  no_out.c_out.clear();
  CHECK_THROWS_AS(compose_forward(Variant::Rho, m, x, {4}, no_out), std::invalid_argument);
  auto bad_tok = p;
  bad_tok.c_out[0].push_back(40);
  CHECK_THROWS_WITH_AS(compose_forward(Variant::Backbone, m, x, {4}, bad_tok), doctest::Contains("caption token 40"),
                       std::invalid_argument);
}

TEST_CASE("lora: zero B and rank-1 outer product") {
  auto m = small_models(31);
  const std::string name = "dec1.film.w";
  Weights plain(m.theta), adapted(m.theta, &m.lora, m.lora_cfg.scale());
  CHECK(num::bit_equal(adapted(name), plain(name)));

  LoraConfig one{1, 1.0f};
  num::Rng rng(32);
  ParamSet lora = make_lora(m.theta, one, rng);
  const Tensor& w = m.theta.at(name);
  const int out = w.dim(0), in = w.dim(1);
  Tensor u = num::randn({1, in}, rng), v = num::randn({out, 1}, rng);
  std::copy(u.data().begin(), u.data().end(), Tensor(lora.at(name + ".A")).mutable_data().begin());
  std::copy(v.data().begin(), v.data().end(), Tensor(lora.at(name + ".B")).mutable_data().begin());
  Weights w1(m.theta, &lora, one.scale());
  Tensor eff = w1(name);
  double err = 0.0;
  for (int i = 0; i < out; ++i) {
    for (int j = 0; j < in; ++j) {
      const double expect = double(w.ptr()[i * in + j]) + double(v.ptr()[i]) * u.ptr()[j];
      err = std::max(err, std::fabs(eff.ptr()[i * in + j] - expect));
    }
  }
  CHECK(err < 1e-6);
  CHECK(num::checksum(m.theta.at(name)) == num::checksum(w));
}

TEST_CASE("lora: rank mismatch is rejected") {
  auto m = small_models(33);
  ParamSet bad("theta_align");
  const Tensor& w = m.theta.at("out_conv.w");
  bad.add("out_conv.w.A", Tensor::zeros({2, static_cast<int>(w.numel() / w.dim(0))}));
  bad.add("out_conv.w.B", Tensor::zeros({w.dim(0), 3}));
  Weights wb(m.theta, &bad, 1.0f);
  CHECK_THROWS_AS(wb("out_conv.w"), ShapeError);
}

TEST_CASE("lora: gradients reach only A and B when theta is frozen") {
  auto m = small_models(41);
  num::Rng rng(42);
  perturb(m.lora, rng, 0.02f);
  m.lora.set_trainable(true);
  auto p = pack_for(1, 2, rng);
  Tensor x = num::randn({2, 3, 8, 8}, rng);
  num::Tape tape;
  num::Gradients g;
  {
    num::TapeScope on(tape);
    g = tape.backward(num::mean(compose_forward(Variant::Phi, m, x, {6}, p)));
  }
  for (const ParamSet* s : {&m.theta, &m.edit, &m.video}) {
    for (const auto& item : s->items()) CHECK_FALSE(g.has(item.tensor));
  }
  std::size_t reached = 0, nonzero = 0;
  for (const auto& item : m.lora.items()) {
    if (!g.has(item.tensor)) continue;
    ++reached;
    for (float v : g.of(item.tensor)) {
      if (v != 0.0f) {
        ++nonzero;
        break;
      }
    }
  }
  CHECK(reached == m.lora.size());
  CHECK(nonzero > m.lora.size() / 2);
}

TEST_CASE("checkpoint round trip and missing components") {
  auto m = small_models(51);
  num::Rng rng(52);
  perturb(m.video, rng, 0.1f);
  const auto sched = diffusion::make_schedule(32);
  auto dir = std::filesystem::temp_directory_path() / "fddlab_ck_test";
  std::filesystem::remove_all(dir);
  save_model_set(dir, m, sched);
  auto loaded = load_model_set(dir);
  CHECK(loaded.model.theta.checksum() == m.theta.checksum());
  CHECK(loaded.model.edit.checksum() == m.edit.checksum());
  CHECK(loaded.model.video.checksum() == m.video.checksum());
  CHECK(loaded.model.lora.checksum() == m.lora.checksum());
  CHECK(loaded.sched.alpha_bar == sched.alpha_bar);
  CHECK(loaded.model.cfg.c1 == 16);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_model_set(dir), MissingDependency);
}

TEST_CASE("edit_longer_video window arithmetic") {
  auto m = small_models(61);
  num::Rng rng(62);
  perturb(m.video, rng, 0.05f);
  perturb(m.edit, rng, 0.05f);
  const auto sched = diffusion::make_schedule(16);
  const auto steps = diffusion::uniform_timesteps(2, 16);
  Tensor video = num::rand_uniform({6, 3, 8, 8}, rng, -1, 1);
  const std::vector<int> cap{1, 2, 3}, ins{4, 5};

  num::Rng r1(70);
  Tensor direct_in = num::slice(video, 0, 0, 3);
  Tensor one = edit_longer_video(Variant::Phi, m, direct_in, cap, ins, 3, steps, sched, r1);
  // Same call spelled out: psi first frame, then one phi window.
  ConditionPack p;
  p.frames = 3;
  p.c_out = {cap};
  p.c_instruct = {ins};
  p.c_vid = direct_in;
  num::Rng r2(70);
  num::Rng rf = r2.split("first0");
  p.first_frame = first_frame_input(psi_first_frames(m, p, steps, sched, rf), {1.0f});
  num::Rng rw = r2.split(std::uint64_t{0});
  CHECK(num::bit_equal(one, sample_variant(Variant::Phi, m, p, steps, sched, rw)));

  num::Rng r3(70);
  Tensor two = edit_longer_video(Variant::Phi, m, video, cap, ins, 3, steps, sched, r3);
  CHECK(two.shape() == video.shape());
  CHECK(num::bit_equal(num::slice(two, 0, 0, 3), one));

  num::Rng r4(70);
  Tensor odd = edit_longer_video(Variant::Phi, m, num::slice(video, 0, 0, 5), cap, ins, 3, steps, sched, r4);
  CHECK(odd.dim(0) == 5);
  CHECK_THROWS_AS(edit_longer_video(Variant::Phi, m, num::slice(video, 0, 0, 2), cap, ins, 3, steps, sched, r4),
                  std::invalid_argument);
}

TEST_CASE("feature net ignores captions and matches the backbone encoder") {
  auto m = small_models(71);
  num::Rng rng(72);
  Tensor x = num::randn({3, 3, 8, 8}, rng);
  Tensor f = feature_net(m.theta, m.cfg, x);
  CHECK(f.shape() == num::Shape{3, 32, 4, 4});
  Weights w(m.theta);
  std::vector<std::vector<int>> none(3);
  Tensor cond = backbone_cond(w, m.cfg, {1, 1, 1}, none, 1);
  EncoderOut e = encode(w, m.cfg, num::conv2d(x, w("in_conv.w"), w("in_conv.b"), 1), cond);
  CHECK(num::bit_equal(f, e.s2));
}
