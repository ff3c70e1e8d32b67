#include "fddlab/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "fddlab/errors.hpp"

namespace fddlab::num {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}
}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float value) {
  check_extents(shape);
  auto node = std::make_shared<Node>();
  node->storage = std::make_shared<Buffer>(num::numel(shape), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, const std::vector<float>& values) {
  return from(std::move(shape), std::span<const float>(values));
}

Tensor Tensor::from(Shape shape, std::span<const float> values) {
  check_extents(shape);
  if (num::numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  auto node = std::make_shared<Node>();
  node->storage = std::make_shared<Buffer>(values.begin(), values.end());
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value) { return from({}, {value}); }

int Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(a)];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return (*node_->storage)[0];
}

Tensor Tensor::clone() const {
  Tensor t = from(shape(), data());
  t.set_requires_grad(requires_grad());
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(double(a.ptr()[i]) - b.ptr()[i]));
  return m;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (int d : t.shape()) feed(&d, sizeof d);
  feed(t.ptr(), t.numel() * sizeof(float));
  return h;
}

}  // namespace fddlab::num
