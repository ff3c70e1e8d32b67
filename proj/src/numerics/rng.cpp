#include "fddlab/numerics/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace fddlab::num {

std::uint64_t Rng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Rng Rng::split(std::string_view name) const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return Rng(mix(key_ ^ mix(h)), 0);
}

Rng Rng::split(std::uint64_t index) const { return Rng(mix(key_ ^ mix(index + 0x632be59bd9b4e019ull)), 0); }

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

Tensor randn(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.mutable_data()) v = static_cast<float>(rng.normal());
  return t;
}

Tensor rand_uniform(Shape shape, Rng& rng, float lo, float hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.mutable_data()) v = lo + (hi - lo) * static_cast<float>(rng.uniform());
  return t;
}

}  // namespace fddlab::num
