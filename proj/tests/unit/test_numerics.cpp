#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fddlab/errors.hpp"
#include "fddlab/numerics/adam.hpp"
#include "fddlab/numerics/fdt1.hpp"
#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/rng.hpp"
#include "fddlab/numerics/tape.hpp"
#include "../support/gradcheck.hpp"

using namespace fddlab;
using namespace fddlab::num;

namespace {
Tensor leaf(Shape s, std::vector<float> v) {
  Tensor t = Tensor::from(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}
}  // namespace

TEST_CASE("stop_grad blocks the gradient") {
  Tensor x = leaf({3}, {1, 2, 3});
  Tape tape;
  Gradients g;
  {
    TapeScope on(tape);
    Tensor y = add(stop_grad(x), scale(x, 0.0f));
    g = tape.backward(sum(mul(stop_grad(x), y)));
  }
  auto gx = g.tensor(x);
  for (float v : gx.data()) CHECK(v == 0.0f);
}

TEST_CASE("identity conv kernel and identity matmul") {
  Rng rng(3);
  Tensor x = randn({2, 1, 5, 5}, rng);
  std::vector<float> k(9, 0.0f);
  k[4] = 1.0f;
  Tensor y = conv2d(x, Tensor::from({1, 1, 3, 3}, k), Tensor(), 1);
  CHECK(bit_equal(x, y));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(bit_equal(matmul(a, eye), a));
}

TEST_CASE("shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  // Zero extents cannot be constructed, so an empty softmax axis never exists.
  CHECK_THROWS_AS(Tensor::zeros({3, 0}), ShapeError);
  CHECK_THROWS_AS(softmax(a, 2), ShapeError);
}

TEST_CASE("backward on linear and quadratic losses") {
  Tensor x = leaf({3}, {1, 2, 3});
  Tensor c = Tensor::from({3}, {0.5f, -2.0f, 4.0f});
  {
    Tape tape;
    TapeScope on(tape);
    auto g = tape.backward(sum(mul(x, c)));
    auto gx = g.of(x);
    CHECK(gx[0] == 0.5f);
    CHECK(gx[1] == -2.0f);
    CHECK(gx[2] == 4.0f);
  }
  {
    Tape tape;
    TapeScope on(tape);
    auto g = tape.backward(mean(mul(x, x)));
    auto gx = g.of(x);
    CHECK(gx[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(gx[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
    CHECK(gx[2] == doctest::Approx(2.0).epsilon(1e-6));
  }
}

TEST_CASE("results do not depend on heap state") {
  auto run = [] {
    Rng rng(5);
    Tensor x = randn({3, 2, 5, 5}, rng), w = randn({3, 2, 3, 3}, rng), b = randn({3}, rng);
    Tensor lw = randn({1, 75}, rng), lb = randn({1}, rng);
    for (Tensor* t : {&x, &w, &b, &lw, &lb}) t->set_requires_grad(true);
    Tape tape;
    TapeScope on(tape);
    Tensor y = linear(reshape(conv2d(x, w, b), {3, 75}), lw, lb);
    auto g = tape.backward(sum(mul(y, y)));
    return std::vector<Tensor>{y, g.tensor(x), g.tensor(w), g.tensor(b), g.tensor(lw), g.tensor(lb)};
  };
  const auto first = run();
  for (int shift = 1; shift < 16; ++shift) {
    std::vector<std::vector<float>> churn;
    for (int i = 0; i < shift; ++i) churn.emplace_back(4 * i + shift);
    const auto again = run();
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(bit_equal(first[i], again[i]));
    CHECK(reinterpret_cast<std::uintptr_t>(again[0].ptr()) % EIGEN_MAX_ALIGN_BYTES == 0);
  }
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = leaf({3}, {1, 2, 3});
  Tape tape;
  TapeScope on(tape);
  Tensor y = scale(x, 2.0f);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("a value consumed twice accumulates both paths") {
  Tensor x = leaf({2}, {1.5f, -2.0f});
  Tape tape;
  TapeScope on(tape);
  Tensor y = add(scale(x, 3.0f), scale(x, 4.0f));
  auto g = tape.backward(sum(y));
  CHECK(g.of(x)[0] == 7.0f);
  CHECK(g.of(x)[1] == 7.0f);
}

TEST_CASE("two-layer MLP matches central differences at h=1e-3") {
  Rng rng(11);
  testing::OpFn mlp = [](const std::vector<Tensor>& p) {
    Tensor h = silu(linear(p[0], p[1], p[2]));
    return linear(h, p[3], p[4]);
  };
  std::vector<Tensor> params{testing::random_input({4, 5}, rng), testing::random_input({6, 5}, rng),
                             testing::random_input({6}, rng), testing::random_input({3, 6}, rng),
                             testing::random_input({3}, rng)};
  auto r = testing::gradcheck(mlp, params, rng, 1e-3);
  CHECK(r.checked == 20 + 30 + 6 + 18 + 3);
  CHECK(r.max_error < 1e-3);
}

TEST_CASE("every op passes a finite-difference check") {
  Rng rng(2024);
  for (const auto& c : testing::op_cases()) {
    for (int trial = 0; trial < 5; ++trial) {
      auto r = testing::gradcheck(c.fn, c.make_inputs(rng), rng);
      INFO(c.name << " trial " << trial << " err " << r.max_error);
      CHECK(r.max_error < 1e-3);
    }
  }
}

TEST_CASE("ops off the tape do not record") {
  Tensor x = leaf({2}, {1, 2});
  Tensor y = scale(x, 2.0f);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  {
    TapeScope on(tape);
    (void)scale(x, 2.0f);
    NoTapeScope off;
    (void)scale(x, 2.0f);
  }
  CHECK(tape.size() == 1);
}

TEST_CASE("tape limit surfaces overflow") {
  Tensor x = leaf({2}, {1, 2});
  Tape tape(2);
  TapeScope on(tape);
  Tensor y = scale(x, 2.0f);
  y = scale(y, 2.0f);
  CHECK_THROWS_AS(scale(y, 2.0f), std::length_error);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = leaf({3}, {0.25f, -1.0f, 3.0f});
  const Tensor before = p.clone();
  Tape tape;
  Gradients g;
  {
    TapeScope on(tape);
    g = tape.backward(sum(scale(p, 0.0f)));
  }
  AdamState st;
  std::vector<NamedTensor> params{{"p", p}};
  adam_step(params, g, st);
  CHECK(bit_equal(p, before));
}

TEST_CASE("adam: one bias-corrected step with unit gradient") {
  // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> step = lr / (1 + eps).
  Tensor p = leaf({}, {2.0f});
  Tape tape;
  Gradients g;
  {
    TapeScope on(tape);
    g = tape.backward(sum(p));
  }
  AdamState st;
  st.config.lr = 0.1;
  std::vector<NamedTensor> params{{"p", p}};
  adam_step(params, g, st);
  CHECK(p.item() == doctest::Approx(2.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-6));
  CHECK(st.step == 1);
}

TEST_CASE("adam: non-finite gradient rejects the step and names the parameter") {
  Tensor p = leaf({2}, {1.0f, 1.0f});
  Tensor q = leaf({1}, {5.0f});
  Tape tape;
  Gradients g;
  {
    TapeScope on(tape);
    Tensor nan = Tensor::from({2}, {std::nanf(""), 0.0f});
    g = tape.backward(add(sum(mul(p, nan)), sum(q)));
  }
  AdamState st;
  std::vector<NamedTensor> params{{"q", q}, {"block.weight", p}};
  try {
    adam_step(params, g, st);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("block.weight") != std::string::npos);
  }
  CHECK(q.item() == 5.0f);
  CHECK(st.step == 0);
}

TEST_CASE("adam: identical seeds give bit-identical parameters") {
  auto run = [] {
    Rng rng(77);
    Tensor w = randn({4, 3}, rng);
    w.set_requires_grad(true);
    Tensor x = randn({5, 3}, rng);
    AdamState st;
    st.config.lr = 0.01;
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      Gradients g;
      {
        TapeScope on(tape);
        Tensor y = linear(x, w, Tensor());
        g = tape.backward(mean(mul(y, y)));
      }
      std::vector<NamedTensor> params{{"w", w}};
      adam_step(params, g, st);
    }
    return w;
  };
  CHECK(bit_equal(run(), run()));
}

TEST_CASE("rng: splits are deterministic and independent") {
  Rng root(5);
  Rng a1 = root.split("noise"), a2 = root.split("noise"), b = root.split("timesteps");
  CHECK(a1.next_u64() == a2.next_u64());
  CHECK(a1.next_u64() != b.next_u64());
  Rng c = root.split(std::uint64_t{3});
  CHECK(c.key() != root.split(std::uint64_t{4}).key());
  double s = 0.0, s2 = 0.0;
  Rng n(9);
  for (int i = 0; i < 20000; ++i) {
    const double v = n.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::fabs(s / 20000) < 0.05);
  CHECK(std::fabs(s2 / 20000 - 1.0) < 0.05);
}

TEST_CASE("FDT1 byte layout") {
  Tensor t = Tensor::from({1, 2}, {1.0f, -2.0f});
  auto bytes = encode_fdt1(t);
  const std::vector<std::uint8_t> expected{'F', 'D', 'T', '1', 2, 1, 0, 0, 0, 2, 0, 0, 0,
                                           0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  CHECK(bytes == expected);
  CHECK(bit_equal(decode_fdt1(bytes), t));
  bytes.pop_back();
  CHECK_THROWS(decode_fdt1(bytes));
}

TEST_CASE("FDT1 round trip through a file") {
  Rng rng(1);
  Tensor t = randn({2, 3, 4, 4}, rng);
  auto path = std::filesystem::temp_directory_path() / "fddlab_roundtrip.fdt";
  write_fdt1(path, t);
  CHECK(bit_equal(read_fdt1(path), t));
  std::filesystem::remove(path);
}
