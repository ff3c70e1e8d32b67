#include <cmath>

#include "doctest.h"
#include "fddlab/errors.hpp"
#include "fddlab/fdd/fdd.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/tape.hpp"

using namespace fddlab;
using namespace fddlab::fdd;
using models::Variant;
using num::Tensor;

namespace {

models::ModelSet tiny(std::uint64_t seed) {
  models::BackboneConfig cfg;
  cfg.c1 = 16;
  cfg.c2 = 32;
  cfg.d = 32;
  num::Rng rng(seed);
  auto m = models::make_model_set(cfg, {}, {}, {}, rng);
  // Wake the zero-initialised outputs so every branch matters.
  num::Rng r = rng.split("wake");
  for (auto* set : {&m.edit, &m.video}) {
    for (const auto& nt : set->items()) {
      Tensor t = nt.tensor;
      for (float& v : t.mutable_data()) {
        if (v == 0.0f) v = static_cast<float>(r.normal() * 0.05);
      }
    }
  }
  return m;
}

worldgen::Subset triplets(int n, int F, std::uint64_t seed) {
  worldgen::Subset s{"fdd", {}};
  num::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    worldgen::WorldSpec w = worldgen::sample_scene(8, 8, F, rng);
    auto ins = worldgen::sample_any_instruction(w, rng);
    worldgen::DataItem it;
    it.id = "fdd_" + std::to_string(i);
    it.caption = ins.c_out;
    it.instruction = ins.c_instruct;
    it.tensors["c_vid"] = worldgen::render(w);
    s.items.push_back(std::move(it));
  }
  return s;
}

struct Fixture {
  models::ModelSet teacher = tiny(1);
  diffusion::NoiseSchedule sched = diffusion::make_schedule(16);
  worldgen::Subset data = triplets(4, 2, 2);
  std::vector<PoolEntry> pool = build_teacher_pool(teacher, data, sched, 2, 3);
  FddConfig cfg = small_cfg();

  static FddConfig small_cfg() {
    FddConfig c;
    c.batch = 2;
    c.warmup_sds_iters = 2;
    c.adversarial_iters = 2;
    c.disc.width = 8;
    c.lr = 1e-3;
    return c;
  }
};

Tensor leaf(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(true);
  return c;
}

}  // namespace

TEST_CASE("SDS gradient equals the teacher residual over N for both teachers") {
  Fixture fx;
  num::Rng rng(5);
  FddBatch b = make_batch(fx.data, fx.pool, {0, 2});
  for (Variant v : {Variant::Psi, Variant::Rho}) {
    for (int trial = 0; trial < 3; ++trial) {
      Tensor x0 = leaf(num::randn(b.pack.c_vid.shape(), rng));
      const std::vector<int> t{rng.uniform_int(1, 16), rng.uniform_int(1, 16)};
      const Tensor eps = num::randn(x0.shape(), rng);
      num::Tape tape;
      num::Gradients g;
      {
        num::TapeScope on(tape);
        g = tape.backward(sds_loss(v, fx.teacher, x0, b.pack, t, eps, fx.sched));
      }
      // Oracle: evaluate the teacher directly, one clip and one frame at a time.
      const int F = b.pack.frames;
      const double N = static_cast<double>(x0.numel());
      double worst = 0.0;
      for (int c = 0; c < 2; ++c) {
        const Tensor xc = num::slice(x0, 0, c * F, F), ec = num::slice(eps, 0, c * F, F);
        const Tensor xt = diffusion::q_sample(xc, t[c], ec, fx.sched);
        Tensor vp;
        if (v == Variant::Rho) {
          models::ConditionPack p;
          p.frames = F;
          p.c_out = {b.pack.c_out[c]};
          p.first_frame = num::slice(b.pack.first_frame, 0, c, 1);
          vp = models::compose_forward(v, fx.teacher, xt, {t[c]}, p);
        } else {
          std::vector<Tensor> rows;
          for (int f = 0; f < F; ++f) {
            models::ConditionPack p;
            p.c_out = {b.pack.c_out[c]};
            p.c_instruct = {b.pack.c_instruct[c]};
            p.c_vid = num::slice(b.pack.c_vid, 0, c * F + f, 1);
            rows.push_back(models::compose_forward(v, fx.teacher, num::slice(xt, 0, f, 1), {t[c]}, p));
          }
          vp = num::concat(std::span<const Tensor>(rows), 0);
        }
        const double a = fx.sched.signal(t[c]), s = fx.sched.noise(t[c]);
        auto grad = g.of(x0);
        for (std::size_t i = 0; i < xc.numel(); ++i) {
          const double eps_hat = a * vp.ptr()[i] + s * xt.ptr()[i];
          const double expected = (eps_hat - ec.ptr()[i]) / N;
          worst = std::max(worst, std::fabs(grad[c * xc.numel() + i] - expected));
        }
      }
      INFO(models::to_string(v) << " worst " << worst);
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("SDS at the terminal step is a perfect-teacher fixed point") {
  Fixture fx;
  num::Rng rng(6);
  FddBatch b = make_batch(fx.data, fx.pool, {1, 3});
  Tensor x0 = leaf(num::randn(b.pack.c_vid.shape(), rng));
  const Tensor eps = num::randn(x0.shape(), rng);
  for (Variant v : {Variant::Psi, Variant::Rho}) {
    num::Tape tape;
    num::TapeScope on(tape);
    auto g = tape.backward(sds_loss(v, fx.teacher, x0, b.pack, {16, 16}, eps, fx.sched));
    for (float x : g.of(x0)) CHECK(x == 0.0f);
  }
  CHECK_THROWS_AS(sds_loss(Variant::Eta, fx.teacher, x0, b.pack, {1, 1}, eps, fx.sched), std::invalid_argument);
  CHECK_THROWS_AS(sds_loss(Variant::Psi, fx.teacher, x0, b.pack, {1}, eps, fx.sched), ShapeError);
}

TEST_CASE("hinge losses: closed forms") {
  auto s = [](std::vector<float> v) {
    const int n = static_cast<int>(v.size());
    Tensor t = Tensor::from({n}, std::move(v));
    t.set_requires_grad(true);
    return t;
  };
  CHECK(hinge_d_loss(s({1, 1}), s({-1, -1})).item() == 0.0f);
  CHECK(hinge_d_loss(s({-0.5f}), s({-1})).item() == 1.5f);
  CHECK(hinge_d_loss(s({2}), s({0.5f})).item() == 1.5f);
  CHECK_THROWS_AS(hinge_d_loss(s({1, 1}), s({1})), ShapeError);

  for (GLossForm form : {GLossForm::Paper, GLossForm::StandardHinge}) {
    Tensor fake = s({-2});
    num::Tape tape;
    num::TapeScope on(tape);
    Tensor l = hinge_g_loss(fake, form);
    auto g = tape.backward(l);
    if (form == GLossForm::Paper) {
      CHECK(l.item() == 0.0f);
      CHECK(g.of(fake)[0] == 0.0f);
    } else {
      CHECK(l.item() == 2.0f);
      CHECK(g.of(fake)[0] == -1.0f);
    }
  }
  num::Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Tensor fake = s({static_cast<float>(rng.normal() * 3), static_cast<float>(rng.normal() * 3)});
    num::Tape tape;
    num::TapeScope on(tape);
    Tensor l = hinge_g_loss(fake, GLossForm::Paper);
    CHECK(l.item() <= 0.0f);
    auto g = tape.backward(l);
    for (int j = 0; j < 2; ++j) {
      if (fake.ptr()[j] < -1.0f) CHECK(g.of(fake)[j] == 0.0f);
    }
  }
}

TEST_CASE("discriminators score frames and clips") {
  Fixture fx;
  num::Rng rng(8);
  auto st = make_state(fx.teacher, fx.cfg);
  FddBatch b = make_batch(fx.data, fx.pool, {0, 1});
  Tensor e = edit_disc_scores(st.d_e, fx.teacher.theta, fx.teacher.cfg, b.real_psi, b.pack.c_vid, b.pack.c_instruct, 2);
  Tensor v = video_disc_scores(st.d_v, fx.teacher.theta, fx.teacher.cfg, b.real_rho, b.pack.c_out, 2);
  CHECK(e.shape() == num::Shape{4});
  CHECK(v.shape() == num::Shape{2});
  CHECK_THROWS_AS(edit_disc_scores(st.d_e, fx.teacher.theta, fx.teacher.cfg, num::slice(b.real_psi, 0, 0, 2),
                                   b.pack.c_vid, b.pack.c_instruct, 2),
                  ShapeError);
  // The video discriminator sees frame order.
  Tensor swapped = num::concat({num::slice(b.real_rho, 0, 1, 1), num::slice(b.real_rho, 0, 0, 1),
                                num::slice(b.real_rho, 0, 2, 2)},
                               0);
  Tensor v2 = video_disc_scores(st.d_v, fx.teacher.theta, fx.teacher.cfg, swapped, b.pack.c_out, 2);
  CHECK(v2.ptr()[0] != v.ptr()[0]);
  CHECK(v2.ptr()[1] == v.ptr()[1]);
}

TEST_CASE("student generation") {
  Fixture fx;
  num::Rng rng(9);
  FddBatch b = make_batch(fx.data, fx.pool, {0, 1});
  auto student = make_student(fx.teacher, fx.cfg);
  const Tensor noise = num::randn(b.pack.c_vid.shape(), rng);

  SUBCASE("k=1 is a single x0 prediction from noise") {
    Tensor x = student_generate(student, b.pack, noise, {16}, fx.sched);
    Tensor v = models::compose_forward(Variant::Phi, student, noise, {16, 16}, b.pack);
    CHECK(num::max_abs_diff(x, diffusion::vpred_to_x0(v, noise, 16, fx.sched)) == 0.0);
  }
  SUBCASE("at iteration 0 the student sample equals the plug-and-play sample") {
    const std::vector<int> steps{16, 9, 3};
    auto eta = diffusion::ddim_sample(models::denoiser(Variant::Eta, fx.teacher, b.pack), noise, steps, fx.sched);
    CHECK(num::bit_equal(student_generate(student, b.pack, noise, steps, fx.sched), eta));
  }
  SUBCASE("fixed steps without k-bin") {
    FddConfig c = fx.cfg;
    c.kbin = false;
    num::Rng r(1);
    const auto first = student_steps(c, 16, r);
    for (int i = 0; i < 20; ++i) CHECK(student_steps(c, 16, r) == first);
    c.kbin = true;
    bool differs = false;
    for (int i = 0; i < 20; ++i) differs |= student_steps(c, 16, r) != first;
    CHECK(differs);
  }
  SUBCASE("gradients reach theta_align only, and are nonzero once B is nonzero") {
    for (const auto& nt : student.lora.items()) {
      if (nt.name.size() > 2 && nt.name.substr(nt.name.size() - 2) == ".B") {
        Tensor t = nt.tensor;
        for (float& v : t.mutable_data()) v = static_cast<float>(rng.normal() * 0.01);
      }
    }
    student.lora.set_trainable(true);
    num::Tape tape;
    num::Gradients g;
    {
      num::TapeScope on(tape);
      g = tape.backward(num::mean(student_generate(student, b.pack, noise, {16, 8, 2}, fx.sched)));
    }
    student.lora.set_trainable(false);
    double total = 0.0;
    for (const auto& nt : student.lora.items()) {
      for (float v : g.of(nt.tensor)) total += std::fabs(v);
    }
    CHECK(total > 0.0);
    for (const auto* set : {&student.theta, &student.edit, &student.video}) {
      for (const auto& nt : set->items()) CHECK_FALSE(g.has(nt.tensor));
    }
  }
  SUBCASE("tape overflow names k") {
    num::Tape tape(50);
    num::TapeScope on(tape);
    student.lora.set_trainable(true);
    CHECK_THROWS_WITH_AS(student_generate(student, b.pack, noise, {16, 8, 2}, fx.sched), doctest::Contains("k=3"),
                         std::length_error);
    student.lora.set_trainable(false);
  }
}

TEST_CASE("teacher samples are detached and shaped per clip") {
  Fixture fx;
  for (const auto& e : fx.pool) {
    CHECK(e.psi.shape() == num::Shape{2, 3, 8, 8});
    CHECK(e.rho.shape() == num::Shape{2, 3, 8, 8});
    CHECK_FALSE(e.psi.requires_grad());
    CHECK_FALSE(e.rho.requires_grad());
  }
  // Per-frame edits: each frame depends only on its own input frame.
  num::Rng r1(4), r2(4);
  const auto& it = fx.data.items[0];
  Tensor a = teacher_sample_psi(fx.teacher, it.tensors.at("c_vid"), it.caption, it.instruction, 2, fx.sched, r1);
  Tensor other = num::concat({num::slice(it.tensors.at("c_vid"), 0, 0, 1), fx.data.items[1].tensors.at("c_vid")}, 0);
  Tensor b = teacher_sample_psi(fx.teacher, other, it.caption, it.instruction, 2, fx.sched, r2);
  CHECK(num::max_abs_diff(num::slice(a, 0, 0, 1), num::slice(b, 0, 0, 1)) < 1e-5);
}

TEST_CASE("training steps honour the schedule and the freeze contract") {
  Fixture fx;
  auto student = make_student(fx.teacher, fx.cfg);
  auto st = make_state(fx.teacher, fx.cfg);
  const auto theta = fx.teacher.theta.checksum(), edit = fx.teacher.edit.checksum(),
             video = fx.teacher.video.checksum();
  const auto de = st.d_e.checksum(), dv = st.d_v.checksum();
  FddBatch b = make_batch(fx.data, fx.pool, {0, 3});
  auto lora = student.lora.checksum();

  auto rec = fdd_train_step(fx.teacher, student, st, b, fx.cfg, fx.sched, 0, num::Rng(1));
  CHECK(rec.phase == "sds");
  CHECK(st.d_e.checksum() == de);
  CHECK(st.d_v.checksum() == dv);
  CHECK(student.lora.checksum() != lora);
  lora = student.lora.checksum();

  rec = fdd_train_step(fx.teacher, student, st, b, fx.cfg, fx.sched, 2, num::Rng(2));
  CHECK(rec.phase == "adv");
  CHECK(st.d_e.checksum() != de);
  CHECK(st.d_v.checksum() != dv);
  CHECK(student.lora.checksum() != lora);
  CHECK(rec.d_edit >= 0.0);
  CHECK(rec.g_edit <= 0.0);

  CHECK(fx.teacher.theta.checksum() == theta);
  CHECK(fx.teacher.edit.checksum() == edit);
  CHECK(fx.teacher.video.checksum() == video);
  CHECK_FALSE(student.lora.trainable());
}

TEST_CASE("training is reproducible and never touches the oracle") {
  Fixture fx;
  const auto calls = worldgen::oracle_calls();
  auto a = train_fdd(fx.teacher, fx.data, fx.pool, fx.cfg, fx.sched);
  auto b = train_fdd(fx.teacher, fx.data, fx.pool, fx.cfg, fx.sched);
  CHECK(worldgen::oracle_calls() == calls);
  CHECK(a.records.size() == 4);
  CHECK(a.student.lora.checksum() == b.student.lora.checksum());
  CHECK(a.state.d_v.checksum() == b.state.d_v.checksum());
}

TEST_CASE("random init trains a separate copy of the whole student") {
  Fixture fx;
  FddConfig c = apply_preset(fx.cfg, Preset::RandomInit);
  c.warmup_sds_iters = 1;
  c.adversarial_iters = 0;
  const auto theta = fx.teacher.theta.checksum();
  auto run = train_fdd(fx.teacher, fx.data, fx.pool, c, fx.sched);
  CHECK(fx.teacher.theta.checksum() == theta);
  CHECK(run.student.theta.checksum() != theta);
}

TEST_CASE("doubling lambda doubles the SDS gradient") {
  Fixture fx;
  auto student = make_student(fx.teacher, fx.cfg);
  FddBatch b = make_batch(fx.data, fx.pool, {1, 2});
  num::Rng rng(11);
  const Tensor noise = num::randn(b.pack.c_vid.shape(), rng);
  const Tensor eps = num::randn(b.pack.c_vid.shape(), rng);
  auto grad_for = [&](float lambda) {
    student.lora.set_trainable(true);
    num::Tape tape;
    num::TapeScope on(tape);
    Tensor x0 = student_generate(student, b.pack, noise, {16, 8, 2}, fx.sched);
    Tensor l = num::add(num::scale(sds_loss(Variant::Psi, fx.teacher, x0, b.pack, {5, 9}, eps, fx.sched), 0.5f * lambda),
                        num::scale(sds_loss(Variant::Rho, fx.teacher, x0, b.pack, {7, 3}, eps, fx.sched), 0.5f * lambda));
    auto g = tape.backward(l);
    student.lora.set_trainable(false);
    std::vector<float> out;
    for (const auto& nt : student.lora.items()) {
      auto s = g.of(nt.tensor);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  };
  const auto g1 = grad_for(2.5f), g2 = grad_for(5.0f);
  REQUIRE(g1.size() == g2.size());
  double nonzero = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(g2[i] == 2.0f * g1[i]);
    nonzero += std::fabs(g1[i]);
  }
  CHECK(nonzero > 0.0);
}

TEST_CASE("ablation presets") {
  FddConfig base;
  base.warmup_sds_iters = 200;
  base.adversarial_iters = 100;
  CHECK(base.alpha == 0.5);
  CHECK(base.beta == 0.5);
  CHECK(base.lambda == 2.5);
  CHECK(base.k == 3);
  CHECK(FddConfig{}.warmup_sds_iters == 1000);
  CHECK(FddConfig{}.adversarial_iters == 500);
  CHECK(apply_preset(base, Preset::NoAlignment).total_iters() == 0);
  auto no_sds = apply_preset(base, Preset::NoSds);
  CHECK(no_sds.lambda == 0.0);
  CHECK(no_sds.adversarial_iters == 300);
  auto no_disc = apply_preset(base, Preset::NoDisc);
  CHECK(no_disc.adversarial_iters == 0);
  CHECK(no_disc.total_iters() == 300);
  CHECK_FALSE(apply_preset(base, Preset::NoKbin).kbin);
  CHECK(apply_preset(base, Preset::RandomInit).init == Init::Random);
  for (const char* n : {"full", "random_init", "no_alignment", "no_sds", "no_disc", "no_kbin"}) {
    CHECK(to_string(parse_preset(n)) == n);
  }
  CHECK_THROWS_AS(parse_preset("nope"), std::invalid_argument);
}
