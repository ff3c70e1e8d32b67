#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/worldgen/dataset.hpp"

using namespace fddlab;
using namespace fddlab::worldgen;
using num::Tensor;
namespace fs = std::filesystem;

namespace {

float px(const Tensor& v, int f, int k, int r, int c) {
  const int H = v.dim(2), W = v.dim(3);
  return v.ptr()[((f * 3 + k) * H + r) * W + c];
}

WorldSpec base(int x, int y, int dx, int dy) {
  WorldSpec s;
  s.shape = Shape::Triangle;
  s.color = 0;
  s.bg = Background::Gradient;
  s.bg_top = 2;
  s.bg_bottom = 4;
  s.x = x;
  s.y = y;
  s.dx = dx;
  s.dy = dy;
  return s;
}

std::vector<std::uint8_t> diff_mask(const Tensor& a, const Tensor& b) {
  const int F = a.dim(0), H = a.dim(2), W = a.dim(3);
  std::vector<std::uint8_t> m(static_cast<std::size_t>(F) * H * W, 0);
  for (int f = 0; f < F; ++f)
    for (int k = 0; k < 3; ++k)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
          if (px(a, f, k, r, c) != px(b, f, k, r, c)) m[(f * H + r) * W + c] = 1;
  return m;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("render: static velocity gives identical frames, values in range") {
  Tensor v = render(base(3, 4, 0, 0));
  for (int f = 1; f < 4; ++f) CHECK(num::bit_equal(num::slice(v, 0, f, 1), num::slice(v, 0, 0, 1)));
  for (float x : v.data()) {
    CHECK(x >= -1.0f);
    CHECK(x <= 1.0f);
  }
}

TEST_CASE("render: unit rightward motion is an exact shift") {
  const WorldSpec s = base(0, 5, 1, 0);
  Tensor v = render(s);
  for (int f = 1; f < 4; ++f)
    for (int k = 0; k < 3; ++k)
      for (int r = 0; r < 16; ++r)
        for (int c = f; c < 16; ++c) CHECK(px(v, f, k, r, c) == px(v, 0, k, r, c - f));
}

TEST_CASE("render: bounce reverses direction at the wall") {
  WorldSpec s = base(16 - 6 - 1, 2, 1, 0);
  CHECK(sprite_position(s, 0)[0] == 9);
  CHECK(sprite_position(s, 1)[0] == 10);
  CHECK(sprite_position(s, 2)[0] == 9);
  CHECK(sprite_position(s, 3)[0] == 8);
  s.dy = -1;
  s.y = 0;
  CHECK(sprite_position(s, 1)[1] == 1);
}

TEST_CASE("render: invalid specs are rejected") {
  WorldSpec s = base(0, 0, 0, 0);
  s.H = 32;
  s.W = 8;
  CHECK_THROWS_WITH_AS(render(s), doctest::Contains("sprite larger than grid"), std::invalid_argument);
  s = base(11, 0, 0, 0);
  CHECK_THROWS_AS(render(s), std::invalid_argument);
  s = base(0, 0, 2, 0);
  CHECK_THROWS_AS(render(s), std::invalid_argument);
}

TEST_CASE("captions stay inside the vocabulary and round-trip through words") {
  num::Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    WorldSpec s = sample_scene(16, 16, 4, rng);
    auto ins = sample_any_instruction(s, rng);
    for (const auto* toks : {&ins.c_out, &ins.c_instruct}) {
      for (int t : *toks) {
        CHECK(t >= 0);
        CHECK(t < tok::kVocab);
      }
      CHECK(parse_tokens(describe(*toks)) == *toks);
    }
    CHECK(ins.c_instruct[0] == tok::kTask + static_cast<int>(ins.task));
    auto back = instruction_from_tokens(ins.c_instruct);
    CHECK(back.task == ins.task);
    CHECK(instruction_tokens(back) == ins.c_instruct);
  }
  CHECK(tok::kTask + kTasks <= tok::kVocab);
}

TEST_CASE("instructions: local and remove captions") {
  WorldSpec s = base(2, 2, 1, 0);
  s.shape = Shape::Square;
  s.color = 0;
  s.bg = Background::Solid;
  s.bg_bottom = s.bg_top = 2;
  num::Rng rng(4);
  auto local = sample_instruction(s, Task::Local, rng);
  CHECK(local.color != 0);
  WorldSpec e = s;
  e.color = local.color;
  CHECK(local.c_out == caption(e));
  CHECK(describe(local.c_out).find("square") != std::string::npos);

  auto rem = sample_instruction(s, Task::Remove, rng);
  CHECK(describe(rem.c_out) == "none solid bg-blue");

  WorldSpec empty = apply_instruction(s, rem);
  CHECK_THROWS_AS(sample_instruction(empty, Task::Remove, rng), std::invalid_argument);
  CHECK_THROWS_AS(instruction_from_tokens({tok::kColor}), std::invalid_argument);
}

TEST_CASE("instructions: tasks are uniform over 1,000 samples") {
  num::Rng rng(2025);
  std::vector<int> counts(kTasks, 0);
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    WorldSpec s = sample_scene(16, 16, 4, rng);
    ++counts[static_cast<int>(sample_any_instruction(s, rng).task)];
  }
  const double p = 1.0 / kTasks, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) CHECK(std::fabs(c - n * p) <= 3 * sigma);
}

TEST_CASE("oracle: local recolor and back is bit-exact") {
  num::Rng rng(5);
  WorldSpec s = base(4, 4, 1, -1);
  Tensor v = render(s);
  InstructionRecord to_blue;
  to_blue.task = Task::Local;
  to_blue.color = 2;
  InstructionRecord back;
  back.task = Task::Local;
  back.color = s.color;
  Tensor e = oracle_edit(v, s, to_blue);
  CHECK_FALSE(num::bit_equal(e, v));
  CHECK(num::bit_equal(oracle_edit(e, apply_instruction(s, to_blue), back), v));
}

TEST_CASE("oracle: remove on a background-only scene is the identity") {
  WorldSpec s = base(1, 1, 0, 1);
  s.shape = Shape::None;
  Tensor v = render(s);
  InstructionRecord rem;
  rem.task = Task::Remove;
  CHECK(num::bit_equal(oracle_edit(v, s, rem), v));
}

TEST_CASE("oracle: local and texture change exactly the sprite pixels") {
  num::Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    WorldSpec s = sample_scene(16, 16, 4, rng);
    if (rng.uniform() < 0.3) s.style = true;
    Tensor v = render(s);
    for (Task t : {Task::Local, Task::Texture}) {
      auto ins = sample_instruction(s, t, rng);
      CHECK(diff_mask(oracle_edit(v, s, ins), v) == sprite_mask(s));
    }
  }
}

TEST_CASE("oracle: pixels outside the change region are untouched") {
  num::Rng rng(7);
  for (int i = 0; i < 300; ++i) {
    WorldSpec s = sample_scene(16, 16, 4, rng);
    Tensor v = render(s);
    auto ins = sample_any_instruction(s, rng);
    Tensor e = oracle_edit(v, s, ins);
    const auto d = diff_mask(e, v), m = change_mask(s, ins);
    for (std::size_t p = 0; p < d.size(); ++p) {
      if (!m[p]) CHECK(d[p] == 0);
    }
    // The edited clip is exactly the render of the edited scene.
    CHECK(num::bit_equal(e, render(apply_instruction(s, ins))));
    CHECK(caption(apply_instruction(s, ins)) == ins.c_out);
  }
}

TEST_CASE("oracle: edit-then-crop equals crop-then-edit") {
  num::Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    WorldSpec s = sample_scene(16, 16, 6, rng);
    Tensor v = render(s);
    auto ins = sample_any_instruction(s, rng);
    const int a = rng.uniform_int(1, 5), len = s.F - a;
    WorldSpec sa = advance(s, a);
    CHECK(num::bit_equal(render(sa), num::slice(v, 0, a, len)));
    CHECK(num::bit_equal(num::slice(oracle_edit(v, s, ins), 0, a, len), oracle_edit(num::slice(v, 0, a, len), sa, ins)));
  }
}

TEST_CASE("datasets: deterministic, reloadable, unsupervised, disjoint") {
  DatasetConfig cfg;
  cfg.n_backbone = cfg.n_edit = cfg.n_video = cfg.n_fdd = cfg.n_eval = 10;
  cfg.seed = 42;
  const fs::path a = fs::temp_directory_path() / "fddlab_ds_a", b = fs::temp_directory_path() / "fddlab_ds_b";
  fs::remove_all(a);
  fs::remove_all(b);
  build_datasets(a, cfg);
  build_datasets(b, cfg);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(read_bytes(e.path()) == read_bytes(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 5 + 10 + 20 + 10 + 10 + 30);

  auto fdd = load_fdd_triplets(a);
  REQUIRE(fdd.items.size() == 10);
  for (const auto& it : fdd.items) {
    CHECK(it.files.size() == 1);
    CHECK(it.files.count("c_vid") == 1);
    CHECK(it.tensors.at("c_vid").shape() == num::Shape{4, 3, 16, 16});
    CHECK_FALSE(it.instruction.empty());
  }
  auto eval = load_subset(a, "eval");
  std::set<std::uint64_t> train;
  for (const char* name : {"backbone", "edit", "video", "fdd"}) {
    for (const auto& it : load_subset(a, name).items) train.insert(it.scene_hash);
  }
  for (const auto& it : eval.items) CHECK(train.count(it.scene_hash) == 0);

  // A manifest that smuggles a target into the unsupervised set is refused.
  {
    std::ofstream out(a / "fdd" / "manifest.tsv", std::ios::app);
    out << "fdd_99999\tlocal\t1 2\t43\t1\t1\tc_vid=fdd_00000.c_vid.fdt,target=fdd_00000.c_vid.fdt\n";
  }
  CHECK_THROWS_WITH(load_fdd_triplets(a), doctest::Contains("target"));
  fs::remove_all(a);
  fs::remove_all(b);
  CHECK_THROWS_AS(load_subset(a, "eval"), MissingDependency);
}

TEST_CASE("datasets: overlapping seed ranges are rejected") {
  std::vector<SeedRange> r{{"fdd", 100, 200}, {"eval", 150, 160}};
  CHECK_THROWS_AS(check_seed_ranges(r), std::invalid_argument);
  r[1] = {"eval", 200, 210};
  CHECK_NOTHROW(check_seed_ranges(r));
  DatasetConfig cfg;
  CHECK_NOTHROW(check_seed_ranges(seed_ranges(cfg)));
}

TEST_CASE("ppm output") {
  Tensor img = Tensor::full({3, 2, 3}, 1.0f);
  const fs::path p = fs::temp_directory_path() / "fddlab_test.ppm";
  write_ppm(p, img, 2);
  auto bytes = read_bytes(p);
  const std::string header = "P6\n6 4\n255\n";
  CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
  CHECK(bytes.size() == header.size() + 6 * 4 * 3);
  CHECK(bytes.back() == 255);
  fs::remove(p);
  Tensor g = tile_grid({{img, img}, {img, img}});
  CHECK(g.shape() == num::Shape{3, 5, 7});
}
