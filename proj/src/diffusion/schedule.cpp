#include "fddlab/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/ops.hpp"

namespace fddlab::diffusion {

using num::Tensor;

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine") return ScheduleKind::Cosine;
  throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Linear ? "linear" : "cosine"; }

double NoiseSchedule::signal(int t) const { return std::sqrt(alpha_bar.at(t)); }
double NoiseSchedule::noise(int t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }
double NoiseSchedule::snr(int t) const { return alpha_bar.at(t) / (1.0 - alpha_bar.at(t)); }

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
}

NoiseSchedule make_schedule(int T, ScheduleKind kind, bool zero_terminal) {
  if (T < 2) throw std::invalid_argument("schedule needs T >= 2, got " + std::to_string(T));
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.zero_terminal = zero_terminal;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);

  if (kind == ScheduleKind::Linear) {
    const double scale = 1000.0 / T;
    const double b0 = 1e-4 * scale, b1 = 0.02 * scale;
    for (int t = 1; t <= T; ++t) {
      const double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
      s.beta[t] = std::min(0.999, b0 + (b1 - b0) * frac);
    }
  } else {
    constexpr double off = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + off) / (1.0 + off) * 1.5707963267948966);
      return c * c;
    };
    for (int t = 1; t <= T; ++t) s.beta[t] = std::min(0.999, 1.0 - f(t) / f(t - 1));
  }
  for (int t = 1; t <= T; ++t) s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);

  if (zero_terminal) {
    std::vector<double> root(T + 1);
    for (int t = 0; t <= T; ++t) root[t] = std::sqrt(s.alpha_bar[t]);
    const double first = root[1], last = root[T];
    const double stretch = first / (first - last);
    for (int t = 1; t <= T; ++t) {
      const double r = (root[t] - last) * stretch;
      s.alpha_bar[t] = r * r;
    }
    for (int t = 1; t <= T; ++t) s.beta[t] = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
  }
  return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_step(t);
  if (x0.shape() != eps.shape()) {
    throw ShapeError("q_sample: x0 " + num::to_string(x0.shape()) + " vs eps " + num::to_string(eps.shape()));
  }
  return num::add(num::scale(x0, static_cast<float>(sched.signal(t))),
                  num::scale(eps, static_cast<float>(sched.noise(t))));
}

Tensor vpred_to_eps(const Tensor& v, const Tensor& x_t, int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  return num::add(num::scale(v, static_cast<float>(sched.signal(t))),
                  num::scale(x_t, static_cast<float>(sched.noise(t))));
}

Tensor vpred_to_x0(const Tensor& v, const Tensor& x_t, int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  return num::sub(num::scale(x_t, static_cast<float>(sched.signal(t))),
                  num::scale(v, static_cast<float>(sched.noise(t))));
}

Tensor eps_to_x0(const Tensor& eps, const Tensor& x_t, int t, const NoiseSchedule& sched, const Tensor* v) {
  sched.check_step(t);
  const double a = sched.signal(t);
  if (a == 0.0) {
    if (!v) throw std::domain_error("eps_to_x0 at alpha_bar = 0 needs the v prediction");
    return num::scale(*v, -1.0f);
  }
  return num::scale(num::sub(x_t, num::scale(eps, static_cast<float>(sched.noise(t)))), static_cast<float>(1.0 / a));
}

Tensor v_target(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  return num::sub(num::scale(eps, static_cast<float>(sched.signal(t))),
                  num::scale(x0, static_cast<float>(sched.noise(t))));
}

namespace {

// [N,1,...,1] coefficient tensor, one value per row group.
Tensor row_coef(const Tensor& like, const std::vector<int>& t, const NoiseSchedule& sched,
                double (NoiseSchedule::*fn)(int) const) {
  const int n = like.dim(0);
  if (t.empty() || n % static_cast<int>(t.size()) != 0) {
    throw ShapeError("batched timesteps: " + std::to_string(t.size()) + " steps for leading extent " +
                     std::to_string(n));
  }
  const int group = n / static_cast<int>(t.size());
  num::Shape shape(like.rank(), 1);
  shape[0] = n;
  std::vector<float> c(n);
  for (int i = 0; i < n; ++i) {
    const int step = t[i / group];
    sched.check_step(step);
    c[i] = static_cast<float>((sched.*fn)(step));
  }
  return Tensor::from(std::move(shape), std::move(c));
}

}  // namespace

Tensor q_sample(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("q_sample: x0 " + num::to_string(x0.shape()) + " vs eps " + num::to_string(eps.shape()));
  }
  return num::add(num::mul(x0, row_coef(x0, t, sched, &NoiseSchedule::signal)),
                  num::mul(eps, row_coef(x0, t, sched, &NoiseSchedule::noise)));
}

Tensor vpred_to_eps(const Tensor& v, const Tensor& x_t, const std::vector<int>& t, const NoiseSchedule& sched) {
  return num::add(num::mul(v, row_coef(v, t, sched, &NoiseSchedule::signal)),
                  num::mul(x_t, row_coef(v, t, sched, &NoiseSchedule::noise)));
}

Tensor vpred_to_x0(const Tensor& v, const Tensor& x_t, const std::vector<int>& t, const NoiseSchedule& sched) {
  return num::sub(num::mul(x_t, row_coef(v, t, sched, &NoiseSchedule::signal)),
                  num::mul(v, row_coef(v, t, sched, &NoiseSchedule::noise)));
}

Tensor v_target(const Tensor& x0, const Tensor& eps, const std::vector<int>& t, const NoiseSchedule& sched) {
  return num::sub(num::mul(eps, row_coef(x0, t, sched, &NoiseSchedule::signal)),
                  num::mul(x0, row_coef(x0, t, sched, &NoiseSchedule::noise)));
}

}  // namespace fddlab::diffusion
