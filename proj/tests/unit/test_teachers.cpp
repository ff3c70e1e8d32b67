#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/teachers/probes.hpp"
#include "fddlab/teachers/teachers.hpp"

using namespace fddlab;
using namespace fddlab::worldgen;
using num::Tensor;
namespace fs = std::filesystem;

namespace {

models::ModelSet tiny(std::uint64_t seed) {
  models::BackboneConfig cfg;
  cfg.c1 = 16;
  cfg.c2 = 32;
  cfg.d = 32;
  num::Rng rng(seed);
  return models::make_model_set(cfg, {}, {}, {}, rng);
}

Subset frames_subset(int n, int F, std::uint64_t seed) {
  Subset s{"t", {}};
  num::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    WorldSpec w = sample_scene(8, 8, F, rng);
    DataItem it;
    it.id = std::to_string(i);
    it.caption = caption(w);
    it.tensors["frame"] = render(w);
    it.tensors["video"] = it.tensors["frame"];
    auto ins = sample_any_instruction(w, rng);
    it.instruction = ins.c_instruct;
    it.tensors["c_img"] = it.tensors["frame"];
    it.tensors["target"] = render(apply_instruction(w, ins));
    it.caption = F == 1 ? ins.c_out : it.caption;
    s.items.push_back(std::move(it));
  }
  return s;
}

double tail_mean(const teachers::TrainLog& log, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += log.train[log.train.size() - 1 - i].loss;
  return s / n;
}

}  // namespace

TEST_CASE("backbone overfits a single frame") {
  auto m = tiny(1);
  auto data = frames_subset(1, 1, 3);
  auto sched = diffusion::make_schedule(64);
  teachers::PretrainConfig cfg;
  cfg.iterations = 1500;
  cfg.batch = 8;
  cfg.lr = 3e-3;
  cfg.cosine_decay = true;
  cfg.overfit = true;
  cfg.eval_every = 100;
  auto log = teachers::pretrain_backbone(m, data, sched, cfg);
  INFO("final loss " << tail_mean(log, 20));
  CHECK(tail_mean(log, 20) < 1e-2);
}

TEST_CASE("adapter training leaves theta untouched and writes a loss curve") {
  auto m = tiny(2);
  auto sched = diffusion::make_schedule(32);
  const auto theta_sum = m.theta.checksum();
  const fs::path out = fs::temp_directory_path() / "fddlab_teacher_out";
  fs::remove_all(out);
  teachers::PretrainConfig cfg;
  cfg.iterations = 6;
  cfg.batch = 4;
  cfg.holdout = 2;
  cfg.eval_every = 3;
  cfg.grid_every = 6;
  cfg.grid_steps = 2;
  cfg.out_dir = out;

  auto pairs = frames_subset(6, 1, 4);
  auto log = teachers::train_edit_adapter(m, pairs, sched, cfg);
  CHECK(m.theta.checksum() == theta_sum);
  CHECK(log.train.size() == 6);
  REQUIRE(log.heldout.size() == 3);
  CHECK(log.heldout[0].iteration == 0);
  CHECK(log.heldout[2].iteration == 6);
  CHECK_FALSE(m.edit.trainable());
  CHECK(fs::exists(out / "grid_6.ppm"));
  std::ifstream csv(out / "loss.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iteration,split,loss");

  auto clips = frames_subset(6, 4, 5);
  const auto video_before = m.video.checksum();
  cfg.out_dir.clear();
  teachers::train_video_adapter(m, clips, sched, cfg);
  CHECK(m.theta.checksum() == theta_sum);
  CHECK(m.video.checksum() != video_before);
  fs::remove_all(out);
}

TEST_CASE("a non-finite loss aborts with the iteration index") {
  auto m = tiny(3);
  auto data = frames_subset(4, 1, 6);
  auto& px = data.items[0].tensors["frame"];
  px = px.clone();
  px.mutable_data()[0] = std::nanf("");
  teachers::PretrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch = 4;
  cfg.overfit = true;
  auto sched = diffusion::make_schedule(16);
  CHECK_THROWS_WITH_AS(teachers::pretrain_backbone(m, data, sched, cfg), doctest::Contains("iteration 0"),
                       NumericalError);
}

TEST_CASE("held-out split must leave training items") {
  auto m = tiny(4);
  auto data = frames_subset(3, 1, 7);
  teachers::PretrainConfig cfg;
  cfg.holdout = 3;
  CHECK_THROWS_AS(teachers::pretrain_backbone(m, data, diffusion::make_schedule(16), cfg), std::invalid_argument);
}

TEST_CASE("smooth is a trailing mean") {
  auto s = teachers::smooth({1, 2, 3, 4, 5}, 2);
  CHECK(s == std::vector<double>{1, 1.5, 2.5, 3.5, 4.5});
  CHECK_THROWS(teachers::smooth({1}, 0));
}

TEST_CASE("color classifier is exact on rendered frames") {
  num::Rng rng(9);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    WorldSpec s = sample_scene(16, 16, 1, rng);
    if (s.style || s.texture != Texture::None || s.companion != Shape::None || s.bg != Background::Solid) continue;
    auto g = teachers::classify_colors(num::reshape(render(s), {3, 16, 16}));
    CHECK(g.sprite == s.color);
    CHECK(g.background == s.bg_top);
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("motion probe recovers rendered trajectories and rejects wrong ones") {
  num::Rng rng(10);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    WorldSpec s = sample_scene(16, 16, 4, rng);
    if (s.style || s.texture != Texture::None || s.companion != Shape::None) continue;
    const Tensor v = render(s);
    CHECK(teachers::motion_matches(v, s.color, s.dx, s.dy));
    CHECK_FALSE(teachers::motion_matches(v, s.color, s.dx == 0 ? 1 : 0, s.dy));
    ++checked;
  }
  CHECK(checked > 20);
  const auto a = std::vector<std::uint8_t>{1, 0, 0, 0, 0, 0, 0, 0, 0};
  const auto b = std::vector<std::uint8_t>{0, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK(teachers::estimate_shift(a, b, 3, 3) == std::array<int, 2>{1, 1});
}
