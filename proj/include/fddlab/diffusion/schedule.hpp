#pragma once

#include <string>
#include <vector>

#include "fddlab/numerics/tensor.hpp"

namespace fddlab::diffusion {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Timesteps run 1..T; index 0 of alpha_bar is the clean signal (1.0).
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::Linear;
  bool zero_terminal = false;
  std::vector<double> beta;       // [0..T], beta[0] unused
  std::vector<double> alpha_bar;  // [0..T], alpha_bar[0] = 1

  double signal(int t) const;  // sqrt(alpha_bar[t])
  double noise(int t) const;   // sqrt(1 - alpha_bar[t])
  double snr(int t) const;
  void check_step(int t) const;
};

/// Linear betas are the classic 1e-4..0.02 range rescaled by 1000/T. With
/// zero_terminal the sqrt(alpha_bar) sequence is shifted and stretched so the
/// last value is exactly zero while the first is preserved.
NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::Linear, bool zero_terminal = true);

/// x_t = sqrt(ab) x0 + sqrt(1 - ab) eps. Differentiable in x0 and eps.
num::Tensor q_sample(const num::Tensor& x0, int t, const num::Tensor& eps, const NoiseSchedule& sched);

/// eps = sqrt(ab) v + sqrt(1 - ab) x_t.
num::Tensor vpred_to_eps(const num::Tensor& v, const num::Tensor& x_t, int t, const NoiseSchedule& sched);
/// x0 = sqrt(ab) x_t - sqrt(1 - ab) v; well defined at alpha_bar = 0.
num::Tensor vpred_to_x0(const num::Tensor& v, const num::Tensor& x_t, int t, const NoiseSchedule& sched);
/// x0 = (x_t - sqrt(1 - ab) eps) / sqrt(ab). At alpha_bar = 0 the answer is
/// taken from `v` (x0 = -v); without it the call is rejected.
num::Tensor eps_to_x0(const num::Tensor& eps, const num::Tensor& x_t, int t, const NoiseSchedule& sched,
                      const num::Tensor* v = nullptr);
/// v target for training: sqrt(ab) eps - sqrt(1 - ab) x0.
num::Tensor v_target(const num::Tensor& x0, const num::Tensor& eps, int t, const NoiseSchedule& sched);

// Batched forms: x has leading extent N = clips * frames and `t` holds one
// timestep per clip (consecutive groups of N / t.size() rows share a step).
num::Tensor q_sample(const num::Tensor& x0, const std::vector<int>& t, const num::Tensor& eps,
                     const NoiseSchedule& sched);
num::Tensor vpred_to_eps(const num::Tensor& v, const num::Tensor& x_t, const std::vector<int>& t,
                         const NoiseSchedule& sched);
num::Tensor vpred_to_x0(const num::Tensor& v, const num::Tensor& x_t, const std::vector<int>& t,
                        const NoiseSchedule& sched);
num::Tensor v_target(const num::Tensor& x0, const num::Tensor& eps, const std::vector<int>& t,
                     const NoiseSchedule& sched);

}  // namespace fddlab::diffusion
