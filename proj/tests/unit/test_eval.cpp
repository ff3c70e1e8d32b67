#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fddlab/errors.hpp"
#include "fddlab/eval/report.hpp"
#include "fddlab/numerics/ops.hpp"

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

Tensor mask_tensor(const std::vector<std::uint8_t>& m, int F, int H, int W) {
  std::vector<float> v(m.begin(), m.end());
  return Tensor::from({F, 1, H, W}, std::move(v));
}

DataItem eval_item(const WorldSpec& w, const InstructionRecord& ins, const std::string& id) {
  DataItem it;
  it.id = id;
  it.task = to_string(ins.task);
  it.caption = ins.c_out;
  it.instruction = ins.c_instruct;
  it.tensors["c_vid"] = render(w);
  it.tensors["oracle"] = oracle_edit(it.tensors["c_vid"], w, ins);
  it.tensors["mask"] = mask_tensor(change_mask(w, ins), w.F, w.H, w.W);
  return it;
}

Subset eval_set(int n, std::uint64_t seed) {
  Subset s{"eval", {}};
  num::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    WorldSpec w = sample_scene(16, 16, 4, rng);
    s.items.push_back(eval_item(w, sample_any_instruction(w, rng), "item" + std::to_string(100 + i)));
  }
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Tensor uniform_frames(int F, num::Rng& rng) {
  std::vector<float> v(F * 3 * 16 * 16);
  for (float& x : v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return Tensor::from({F, 3, 16, 16}, std::move(v));
}

}  // namespace

TEST_CASE("psnr closed forms") {
  Tensor zeros = Tensor::zeros({2, 3, 4, 4});
  Tensor ones = Tensor::full({2, 3, 4, 4}, 1.0f);
  CHECK(eval::psnr(zeros, ones) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(eval::psnr(zeros, ones) == doctest::Approx(6.0206).epsilon(1e-4));

  num::Rng rng(1);
  Tensor a = uniform_frames(2, rng);
  std::vector<float> shifted(a.data().begin(), a.data().end());
  for (float& x : shifted) x = x * 0.9f - 0.05f;
  Tensor lo = Tensor::from(a.shape(), shifted);
  for (float& x : shifted) x += 0.1f;
  Tensor hi = Tensor::from(a.shape(), shifted);
  CHECK(eval::psnr(lo, hi) == doctest::Approx(26.0206).epsilon(1e-4));

  CHECK(eval::psnr(a, a) == eval::kPsnrCap);
  CHECK(eval::psnr(a, lo) == eval::psnr(lo, a));
  CHECK_THROWS_AS(eval::psnr(a, Tensor::zeros({1, 3, 16, 16})), ShapeError);

  auto pf = eval::per_frame_psnr(zeros, ones);
  REQUIRE(pf.size() == 2);
  CHECK(pf[0] == doctest::Approx(6.0206).epsilon(1e-4));
}

TEST_CASE("temporal consistency") {
  auto m = tiny(2);
  auto feat = eval::backbone_features(m.theta, m.cfg);
  num::Rng rng(3);

  SUBCASE("static clip scores exactly one") {
    WorldSpec w = sample_scene(16, 16, 4, rng);
    w.dx = w.dy = 0;
    CHECK(eval::temporal_consistency(render(w), feat) == 1.0);
    Tensor flat = Tensor::full({3, 3, 16, 16}, 0.25f);
    CHECK(eval::temporal_consistency(flat, feat) == 1.0);
  }
  SUBCASE("single frame rejected") {
    CHECK_THROWS_AS(eval::temporal_consistency(Tensor::zeros({1, 3, 16, 16}), feat), std::invalid_argument);
  }
  SUBCASE("white noise is near zero") {
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
      num::Rng r(1000 + s);
      worst = std::max(worst, std::abs(eval::temporal_consistency(uniform_frames(4, r), feat)));
    }
    MESSAGE("max |TC| over 100 noise clips: " << worst);
    CHECK(worst < 0.2);
  }
  SUBCASE("ordered clips score at least their reversed-halves shuffle") {
    int ok = 0, n = 0;
    for (int i = 0; i < 40; ++i) {
      WorldSpec w = sample_scene(16, 16, 8, rng);
      if (w.dx == 0 && w.dy == 0) continue;
      Tensor v = render(w);
      std::vector<Tensor> frames;
      for (int f : {0, 4, 1, 5, 2, 6, 3, 7}) frames.push_back(num::slice(v, 0, f, 1));
      Tensor shuffled = num::concat(std::span<const Tensor>(frames), 0);
      ok += eval::temporal_consistency(v, feat) >= eval::temporal_consistency(shuffled, feat);
      ++n;
    }
    MESSAGE(ok << "/" << n << " moving clips score at least their shuffle");
    CHECK(ok == n);
  }
  SUBCASE("repeatable") {
    Tensor v = uniform_frames(4, rng);
    CHECK(eval::temporal_consistency(v, feat) == eval::temporal_consistency(v, feat));
  }
}

TEST_CASE("directional agreement") {
  auto m = tiny(4);
  auto feat = eval::backbone_features(m.theta, m.cfg);
  num::Rng rng(5);
  WorldSpec w = sample_scene(16, 16, 4, rng);
  auto ins = sample_instruction(w, Task::Local, rng);
  Tensor input = render(w);
  Tensor oracle = oracle_edit(input, w, ins);

  auto same = eval::directional_agreement(input, oracle, oracle, feat);
  CHECK(same.value == 1.0);
  CHECK_FALSE(same.zero_delta);

  auto none = eval::directional_agreement(input, input, oracle, feat);
  CHECK(none.value == 0.0);
  CHECK(none.zero_delta);

  CHECK_THROWS_AS(eval::directional_agreement(input, Tensor::zeros({2, 3, 16, 16}), oracle, feat), ShapeError);

  SUBCASE("other task's oracle scores below the matching one") {
    double other = 0.0;
    int n = 0;
    for (int i = 0; i < 60; ++i) {
      WorldSpec s = sample_scene(16, 16, 4, rng);
      auto tasks = applicable_tasks(s);
      if (tasks.size() < 2) continue;
      auto a = sample_instruction(s, tasks[0], rng);
      auto b = sample_instruction(s, tasks[1 + i % (tasks.size() - 1)], rng);
      Tensor in = render(s);
      Tensor oa = oracle_edit(in, s, a), ob = oracle_edit(in, s, b);
      other += eval::directional_agreement(in, ob, oa, feat).value;
      ++n;
    }
    REQUIRE(n > 20);
    MESSAGE("mean cross-task agreement " << other / n);
    CHECK(other / n < 1.0 - 1e-3);
  }
}

TEST_CASE("unchanged region mse") {
  Tensor out = Tensor::zeros({1, 3, 2, 2});
  Tensor ref = Tensor::from({1, 3, 2, 2}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 2});
  Tensor mask = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 0});
  // pixel 0 masked out; remaining squared errors: 0,0,0 | 0,0,0 | 0,0,4
  CHECK(eval::unchanged_region_mse(out, ref, mask) == doctest::Approx(4.0 / 9.0));
  CHECK(eval::unchanged_region_mse(out, ref, Tensor::full({1, 1, 2, 2}, 1.0f)) == 0.0);
  CHECK_THROWS_AS(eval::unchanged_region_mse(out, ref, Tensor::zeros({1, 1, 2, 3})), ShapeError);
}

TEST_CASE("oracle self-evaluation hits the sentinels") {
  auto m = tiny(6);
  auto feat = eval::backbone_features(m.theta, m.cfg);
  Subset s = eval_set(12, 7);
  auto r = eval::evaluate_run(eval::oracle_editor(), s, feat, {}, {"oracle"});
  REQUIRE(r.items.size() == 12);
  for (const auto& it : r.items) {
    CHECK(it.edit_fidelity_db == eval::kPsnrCap);
    CHECK(it.directional_agreement == 1.0);
    CHECK(it.unchanged_region_mse == 0.0);
  }
  CHECK(r.edit_fidelity_db == eval::kPsnrCap);
  CHECK(r.directional_agreement == 1.0);
}

TEST_CASE("aggregates are means and reports round trip") {
  eval::MetricsReport r;
  r.meta.run = "x";
  r.meta.config_hash = "abc";
  r.meta.iteration = 12;
  for (int i = 0; i < 4; ++i) {
    eval::ItemMetrics it;
    it.item_id = "i" + std::to_string(3 - i);
    it.task = "local";
    it.edit_fidelity_db = 10.0 + i;
    it.temporal_consistency = 0.5 + 0.1 * i;
    it.directional_agreement = -0.25 * i;
    it.unchanged_region_mse = 0.01 * i;
    r.items.push_back(it);
  }
  eval::finalize(r);
  CHECK(r.items.front().item_id == "i0");
  CHECK(r.edit_fidelity_db == doctest::Approx(11.5));
  CHECK(r.temporal_consistency == doctest::Approx(0.65));
  CHECK(r.directional_agreement == doctest::Approx(-0.375));

  fs::path dir = fs::temp_directory_path() / "fddlab_eval_roundtrip";
  fs::create_directories(dir);
  eval::write_report_csv(dir / "report.csv", r);
  std::ifstream in(dir / "report.csv");
  std::string first, header;
  std::getline(in, first);
  std::getline(in, header);
  CHECK(first.rfind("# run=x config_hash=abc", 0) == 0);
  CHECK(header == "item_id,task,edit_fidelity_db,temporal_consistency,directional_agreement,unchanged_region_mse");
  auto back = eval::read_report_csv(dir / "report.csv");
  CHECK(back.meta.config_hash == "abc");
  CHECK(back.meta.iteration == 12);
  REQUIRE(back.items.size() == 4);
  CHECK(back.edit_fidelity_db == doctest::Approx(11.5));
  CHECK_THROWS_AS(eval::read_report_csv(dir / "absent.csv"), MissingDependency);
  fs::remove_all(dir);
}

TEST_CASE("compare joins on item id") {
  eval::MetricsReport a, b;
  for (int i = 0; i < 4; ++i) {
    eval::ItemMetrics x;
    x.item_id = "i" + std::to_string(i);
    x.edit_fidelity_db = 10.0;
    x.temporal_consistency = 0.5;
    x.unchanged_region_mse = 0.1;
    eval::ItemMetrics y = x;
    y.edit_fidelity_db = i < 3 ? 12.0 : 8.0;  // b wins 3 of 4
    y.unchanged_region_mse = 0.2;                // b loses all
    a.items.push_back(x);
    b.items.push_back(y);
  }
  eval::ItemMetrics extra;
  extra.item_id = "only_b";
  b.items.push_back(extra);
  auto rows = eval::compare_reports(a, b);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].metric == "edit_fidelity_db");
  CHECK(rows[0].items == 4);
  CHECK(rows[0].delta == doctest::Approx(1.0));
  CHECK(rows[0].win_rate == doctest::Approx(0.75));
  CHECK(rows[1].win_rate == doctest::Approx(0.5));  // all ties
  CHECK(rows[3].metric == "unchanged_region_mse");
  CHECK(rows[3].win_rate == 0.0);

  eval::MetricsReport c;
  eval::ItemMetrics z;
  z.item_id = "nothing_shared";
  c.items.push_back(z);
  CHECK_THROWS_AS(eval::compare_reports(a, c), std::invalid_argument);
}

TEST_CASE("evaluate_run is deterministic and order invariant") {
  auto m = tiny(8);
  auto sched = diffusion::make_schedule(64);
  auto feat = eval::backbone_features(m.theta, m.cfg);
  Subset s = eval_set(5, 9);
  eval::EvalConfig cfg;
  cfg.steps = 2;
  cfg.first_frame_steps = 2;
  cfg.seed = 11;
  cfg.grid_items = 2;
  auto edit = eval::model_editor(models::Variant::Eta, m, sched, cfg);

  fs::path root = fs::temp_directory_path() / "fddlab_eval_det";
  fs::remove_all(root);
  eval::evaluate_run(edit, s, feat, cfg, {"eta"}, root / "a");
  eval::evaluate_run(edit, s, feat, cfg, {"eta"}, root / "b");
  Subset rev = s;
  std::reverse(rev.items.begin(), rev.items.end());
  eval::evaluate_run(edit, rev, feat, cfg, {"eta"}, root / "c");
  const std::string a = slurp(root / "a" / "report.csv");
  CHECK(a.size() > 100);
  CHECK(a == slurp(root / "b" / "report.csv"));
  CHECK(a == slurp(root / "c" / "report.csv"));
  CHECK(fs::exists(root / "a" / "samples" / "item100.ppm"));
  CHECK_FALSE(fs::exists(root / "a" / "samples" / "item104.ppm"));

  cfg.seed = 12;
  eval::evaluate_run(edit, s, feat, cfg, {"eta"}, root / "d");
  CHECK(a != slurp(root / "d" / "report.csv"));

  CHECK_THROWS_AS(eval::model_editor(models::Variant::Psi, m, sched, cfg), std::invalid_argument);
  Subset broken = s;
  broken.items[2].tensors.erase("oracle");
  CHECK_THROWS_WITH_AS(eval::evaluate_run(edit, broken, feat, cfg, {"eta"}), doctest::Contains("oracle"),
                       std::invalid_argument);
  fs::remove_all(root);
}
