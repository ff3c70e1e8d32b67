#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fddlab::num {

/// Row-major extents. An empty shape denotes a scalar.
using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Aligned so vectorized kernels see the same alignment, and so round the
/// same way, whatever the heap state.
using Buffer = std::vector<float, Eigen::aligned_allocator<float>>;

struct Node {
  Shape shape;
  std::shared_ptr<Buffer> storage;
  bool requires_grad = false;
};

/// Shared handle to an immutable dense float32 array. Ops always allocate
/// a new output; only leaf tensors owned by an optimizer or initializer are
/// ever written in place (through mutable_data()).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from(Shape shape, const std::vector<float>& values);
  static Tensor from(Shape shape, std::span<const float> values);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  /// Extent of `axis`; negative axes count from the back.
  int dim(int axis) const;
  std::size_t numel() const { return node_->storage->size(); }

  std::span<const float> data() const { return {node_->storage->data(), node_->storage->size()}; }
  const float* ptr() const { return node_->storage->data(); }
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  std::span<float> mutable_data() { return {node_->storage->data(), node_->storage->size()}; }

  /// Deep copy as a fresh leaf that keeps the requires_grad flag.
  Tensor clone() const;

  const Node* id() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
/// FNV-1a over shape and raw bytes.
std::uint64_t checksum(const Tensor& t);

}  // namespace fddlab::num
