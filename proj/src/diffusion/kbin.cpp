#include "fddlab/diffusion/kbin.hpp"

#include <stdexcept>
#include <string>

namespace fddlab::diffusion {

std::vector<Bin> kbin_bins(int k, int T) {
  if (k < 1 || k > T) {
    throw std::invalid_argument("kbin: need 1 <= k <= T, got k=" + std::to_string(k) + " T=" + std::to_string(T));
  }
  std::vector<Bin> bins;
  bins.reserve(k);
  int hi = T;
  for (int i = 0; i < k; ++i) {
    const int size = T / k + (i < T % k ? 1 : 0);
    bins.push_back({hi - size + 1, hi});
    hi -= size;
  }
  return bins;
}

TimestepDraw kbin_timesteps(int k, int T, num::Rng& rng) {
  TimestepDraw d;
  d.k = k;
  const auto bins = kbin_bins(k, T);
  for (int i = 0; i < k; ++i) {
    d.steps.push_back(rng.uniform_int(bins[i].lo, bins[i].hi));
    d.bin_index.push_back(i);
  }
  return d;
}

bool kbin_valid(const std::vector<int>& steps, int T) {
  const int k = static_cast<int>(steps.size());
  if (k < 1 || k > T) return false;
  const auto bins = kbin_bins(k, T);
  for (int i = 0; i < k; ++i) {
    if (steps[i] < bins[i].lo || steps[i] > bins[i].hi) return false;
    if (i > 0 && steps[i] >= steps[i - 1]) return false;
  }
  return true;
}

}  // namespace fddlab::diffusion
