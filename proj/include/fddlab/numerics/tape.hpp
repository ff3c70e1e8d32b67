#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fddlab/numerics/tensor.hpp"

namespace fddlab::num {

/// dLoss/dLeaf for every requires_grad leaf reached by a backward pass.
class Gradients {
 public:
  bool has(const Tensor& t) const { return map_.count(t.id()) != 0; }
  /// Empty span when `t` received no gradient.
  std::span<const float> of(const Tensor& t) const;
  /// Gradient as a tensor; zeros when `t` received none.
  Tensor tensor(const Tensor& t) const;
  std::size_t size() const { return map_.size(); }
  bool reaches(const Node* n) const { return map_.count(n) != 0; }

 private:
  friend class Tape;
  std::unordered_map<const Node*, Buffer> map_;
};

/// grad_in[i] is null when input i does not require a gradient.
using BackwardFn = std::function<void(std::span<const float> grad_out, std::span<float* const> grad_in)>;

/// Ordered record of differentiable ops. Entries are appended in execution
/// order, so producers always precede consumers.
class Tape {
 public:
  explicit Tape(std::size_t max_entries = 0) : max_entries_(max_entries) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);
  /// Reverse sweep from a scalar loss; visits every entry once.
  Gradients backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<Node> out;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  std::size_t max_entries_;
};

/// Tape currently receiving records on this thread, or null.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (e.g. for frozen teacher evaluation).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace fddlab::num
