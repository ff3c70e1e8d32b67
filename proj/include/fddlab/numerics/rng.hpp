#pragma once

#include <cstdint>
#include <string_view>

#include "fddlab/numerics/tensor.hpp"

namespace fddlab::num {

/// Counter-based generator: output i is a pure function of (key, i), so a
/// stream can be split by name or index without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  /// Independent child stream; does not advance this stream.
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  Rng(std::uint64_t key, int) : key_(key) {}
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

Tensor randn(Shape shape, Rng& rng);
Tensor rand_uniform(Shape shape, Rng& rng, float lo, float hi);

}  // namespace fddlab::num
