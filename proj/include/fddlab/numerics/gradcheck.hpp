#pragma once

// Central finite-difference oracle. It only ever calls the forward function
// with the tape disabled, so it shares no code path with backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fddlab/numerics/ops.hpp"
#include "fddlab/numerics/rng.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::gradcheck {

using num::Tensor;
using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradcheckResult {
  double max_error = 0.0;  // |analytic - numeric| / max(1, |analytic|)
  std::size_t checked = 0;
};

inline double weighted_sum(const Tensor& out, const std::vector<float>& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) acc += double(out.ptr()[i]) * w[i];
  return acc;
}

inline GradcheckResult gradcheck(const OpFn& f, std::vector<Tensor> inputs, num::Rng& rng, double h = 1e-3) {
  // Projection weights turn any output into a scalar loss.
  std::vector<float> w;
  {
    num::NoTapeScope off;
    const Tensor probe = f(inputs);
    w.resize(probe.numel());
    for (float& v : w) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  }

  num::Gradients grads;
  {
    for (auto& t : inputs) t.set_requires_grad(true);
    num::Tape tape;
    num::TapeScope on(tape);
    const Tensor out = f(inputs);
    const Tensor loss = num::sum(num::mul(out, Tensor::from(out.shape(), w)));
    grads = tape.backward(loss);
  }

  GradcheckResult res;
  num::NoTapeScope off;
  for (auto& t : inputs) {
    auto analytic = grads.tensor(t);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float orig = data[i];
      data[i] = static_cast<float>(orig + h);
      const double lp = weighted_sum(f(inputs), w);
      data[i] = static_cast<float>(orig - h);
      const double lm = weighted_sum(f(inputs), w);
      data[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic.ptr()[i];
      res.max_error = std::max(res.max_error, std::fabs(a - numeric) / std::max(1.0, std::fabs(a)));
      ++res.checked;
    }
  }
  return res;
}

/// Random inputs in [-1, 1] whose magnitude is at least `margin` (keeps
/// kinked ops such as relu away from their kink).
inline Tensor random_input(num::Shape shape, num::Rng& rng, float margin = 0.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.mutable_data()) {
    float x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    if (std::fabs(x) < margin) x = x < 0 ? x - margin : x + margin;
    v = x;
  }
  return t;
}

struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(num::Rng&)> make_inputs;
  OpFn fn;
};

/// Every differentiable op, with small random shapes.
inline std::vector<OpCase> op_cases() {
  using namespace num;
  auto in = [](Shape s, float margin = 0.0f) {
    return [s, margin](Rng& r) { return std::vector<Tensor>{random_input(s, r, margin)}; };
  };
  auto in2 = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{random_input(a, r), random_input(b, r)}; };
  };
  std::vector<OpCase> cases;
  cases.push_back({"add", in2({2, 3, 4}, {3, 1}), [](auto& x) { return add(x[0], x[1]); }});
  cases.push_back({"sub", in2({2, 1, 4}, {3, 4}), [](auto& x) { return sub(x[0], x[1]); }});
  cases.push_back({"mul", in2({2, 3, 2, 2}, {2, 3, 1, 1}), [](auto& x) { return mul(x[0], x[1]); }});
  cases.push_back({"scale", in({3, 4}), [](auto& x) { return scale(x[0], -1.7f); }});
  cases.push_back({"add_scalar", in({3, 4}), [](auto& x) { return add_scalar(x[0], 0.3f); }});
  cases.push_back({"silu", in({3, 5}), [](auto& x) { return silu(x[0]); }});
  cases.push_back({"relu", in({3, 5}, 0.05f), [](auto& x) { return relu(x[0]); }});
  cases.push_back({"matmul", in2({3, 4}, {4, 2}), [](auto& x) { return matmul(x[0], x[1]); }});
  cases.push_back({"bmm", in2({2, 3, 4}, {2, 4, 2}), [](auto& x) { return bmm(x[0], x[1]); }});
  cases.push_back({"bmm_t", in2({2, 3, 4}, {2, 5, 4}), [](auto& x) { return bmm(x[0], x[1], true); }});
  cases.push_back({"linear",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_input({2, 3, 4}, r), random_input({5, 4}, r),
                                                random_input({5}, r)};
                   },
                   [](auto& x) { return linear(x[0], x[1], x[2]); }});
  cases.push_back({"conv2d_s1",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_input({2, 2, 5, 5}, r), random_input({3, 2, 3, 3}, r),
                                                random_input({3}, r)};
                   },
                   [](auto& x) { return conv2d(x[0], x[1], x[2], 1); }});
  cases.push_back({"conv2d_s2",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_input({1, 2, 6, 6}, r), random_input({2, 2, 3, 3}, r),
                                                random_input({2}, r)};
                   },
                   [](auto& x) { return conv2d(x[0], x[1], x[2], 2); }});
  cases.push_back({"conv2d_1x1", in2({2, 3, 3, 3}, {2, 3, 1, 1}),
                   [](auto& x) { return conv2d(x[0], x[1], Tensor(), 1); }});
  cases.push_back({"upsample2x", in({1, 2, 3, 3}), [](auto& x) { return upsample2x(x[0]); }});
  cases.push_back({"group_norm",
                   [](Rng& r) {
                     return std::vector<Tensor>{random_input({2, 4, 3, 3}, r), random_input({4}, r),
                                                random_input({4}, r)};
                   },
                   [](auto& x) { return group_norm(x[0], 2, x[1], x[2]); }});
  cases.push_back({"softmax", in({3, 4, 2}), [](auto& x) { return softmax(x[0], 1); }});
  cases.push_back({"concat", in2({2, 3}, {2, 2}), [](auto& x) { return concat({x[0], x[1]}, 1); }});
  cases.push_back({"slice", in({4, 3}), [](auto& x) { return slice(x[0], 0, 1, 2); }});
  cases.push_back({"sum", in({3, 4}), [](auto& x) { return sum(x[0]); }});
  cases.push_back({"mean", in({3, 4}), [](auto& x) { return mean(x[0]); }});
  cases.push_back({"sum_axis", in({3, 4, 2}), [](auto& x) { return sum_axis(x[0], 1); }});
  cases.push_back({"mean_axis", in({3, 4, 2}), [](auto& x) { return mean_axis(x[0], -1, true); }});
  cases.push_back({"reshape", in({3, 4}), [](auto& x) { return reshape(x[0], {2, 6}); }});
  cases.push_back({"permute", in({2, 3, 4}), [](auto& x) { return permute(x[0], {2, 0, 1}); }});
  cases.push_back({"gather", in({5, 3}), [](auto& x) {
                     const std::vector<int> ids{4, 0, 4, 2};
                     return gather(x[0], ids);
                   }});
  return cases;
}

}  // namespace fddlab::gradcheck
