#include "fddlab/diffusion/ddim.hpp"

#include <stdexcept>
#include <string>

#include "fddlab/diffusion/kbin.hpp"
#include "fddlab/numerics/ops.hpp"

namespace fddlab::diffusion {

using num::Tensor;

Tensor ddim_step(const Tensor& v, const Tensor& x_t, int t, int s, const NoiseSchedule& sched) {
  Tensor x0 = vpred_to_x0(v, x_t, t, sched);
  if (s == 0) return x0;
  sched.check_step(s);
  Tensor eps = vpred_to_eps(v, x_t, t, sched);
  return num::add(num::scale(x0, static_cast<float>(sched.signal(s))),
                  num::scale(eps, static_cast<float>(sched.noise(s))));
}

Tensor ddim_sample(const DenoiseFn& model, const Tensor& noise, const std::vector<int>& steps,
                   const NoiseSchedule& sched) {
  if (steps.empty()) throw std::invalid_argument("ddim_sample: empty step list");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    sched.check_step(steps[i]);
    if (i > 0 && steps[i] >= steps[i - 1]) {
      throw std::invalid_argument("ddim_sample: steps must be strictly descending (" + std::to_string(steps[i - 1]) +
                                  " then " + std::to_string(steps[i]) + ")");
    }
  }
  Tensor x = noise;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const int s = i + 1 < steps.size() ? steps[i + 1] : 0;
    x = ddim_step(model(x, t), x, t, s, sched);
  }
  return x;
}

Tensor ddim_sample(const DenoiseFn& model, const num::Shape& shape, const std::vector<int>& steps,
                   const NoiseSchedule& sched, num::Rng& rng) {
  return ddim_sample(model, num::randn(shape, rng), steps, sched);
}

std::vector<int> full_steps(int T) {
  std::vector<int> s(T);
  for (int i = 0; i < T; ++i) s[i] = T - i;
  return s;
}

std::vector<int> uniform_timesteps(int k, int T) {
  std::vector<int> s;
  for (const auto& b : kbin_bins(k, T)) s.push_back(b.hi);
  return s;
}

}  // namespace fddlab::diffusion
