#pragma once

#include <functional>
#include <vector>

#include "fddlab/diffusion/schedule.hpp"
#include "fddlab/numerics/rng.hpp"

namespace fddlab::diffusion {

/// v-prediction for a batch at a single timestep; conditions are bound by
/// the caller.
using DenoiseFn = std::function<num::Tensor(const num::Tensor& x_t, int t)>;

/// One deterministic DDIM move from step t to step s (s = 0 is the clean
/// sample). Stays on the active tape.
num::Tensor ddim_step(const num::Tensor& v, const num::Tensor& x_t, int t, int s, const NoiseSchedule& sched);

/// eta = 0 chain starting from `noise` taken as x at steps.front(). Throws
/// std::invalid_argument unless steps are strictly descending within 1..T.
num::Tensor ddim_sample(const DenoiseFn& model, const num::Tensor& noise, const std::vector<int>& steps,
                        const NoiseSchedule& sched);
num::Tensor ddim_sample(const DenoiseFn& model, const num::Shape& shape, const std::vector<int>& steps,
                        const NoiseSchedule& sched, num::Rng& rng);

/// T, T-1, ..., 1.
std::vector<int> full_steps(int T);
/// The top of each of k even bins: always starts at T. Used wherever a
/// fixed k-step schedule is needed.
std::vector<int> uniform_timesteps(int k, int T);

}  // namespace fddlab::diffusion
