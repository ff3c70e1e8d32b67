#include "fddlab/numerics/adam.hpp"

#include <cmath>

#include "fddlab/errors.hpp"

namespace fddlab::num {

void adam_step(std::span<const NamedTensor> params, const Gradients& grads, AdamState& state) {
  for (const auto& p : params) {
    auto g = grads.of(p.tensor);
    if (g.empty()) continue;
    if (g.size() != p.tensor.numel()) {
      throw ShapeError("adam: gradient size mismatch for " + p.name);
    }
    for (float v : g) {
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient for parameter " + p.name);
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<float>(c.beta1), b2 = static_cast<float>(c.beta2);
  const auto step_size = static_cast<float>(c.lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(c.eps);

  for (const auto& p : params) {
    auto g = grads.of(p.tensor);
    if (g.empty()) continue;
    auto& mom = state.moments[p.name];
    if (mom.m.size() != g.size()) {
      mom.m.assign(g.size(), 0.0f);
      mom.v.assign(g.size(), 0.0f);
    }
    Tensor t = p.tensor;
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mom.m[i] = b1 * mom.m[i] + (1.0f - b1) * g[i];
      mom.v[i] = b2 * mom.v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * mom.m[i] / (std::sqrt(mom.v[i] * inv_bc2) + eps);
    }
  }
}

}  // namespace fddlab::num
