#pragma once

#include <vector>

#include "fddlab/numerics/rng.hpp"

namespace fddlab::diffusion {

struct Bin {
  int lo = 0;
  int hi = 0;  // inclusive
};

struct TimestepDraw {
  int k = 0;
  std::vector<int> steps;      // strictly descending
  std::vector<int> bin_index;  // bin of each step, 0 = highest t
};

/// k contiguous bins over 1..T ordered from high t to low t. Bins hold
/// T / k steps; the T % k leftover steps go one each to the first bins.
std::vector<Bin> kbin_bins(int k, int T);

/// One uniform draw per bin, returned descending.
TimestepDraw kbin_timesteps(int k, int T, num::Rng& rng);

/// True when steps are strictly descending and step i lies in bin i.
bool kbin_valid(const std::vector<int>& steps, int T);

}  // namespace fddlab::diffusion
