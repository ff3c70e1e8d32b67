#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fddlab/numerics/tape.hpp"
#include "fddlab/numerics/tensor.hpp"

namespace fddlab::num {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  struct Moments {
    std::vector<float> m, v;
  };
  std::unordered_map<std::string, Moments> moments;
};

/// Bias-corrected Adam, updating parameter storage in place. Parameters
/// without a gradient in `grads` are left untouched. A non-finite gradient
/// rejects the whole step with NumericalError naming the parameter.
void adam_step(std::span<const NamedTensor> params, const Gradients& grads, AdamState& state);

}  // namespace fddlab::num
