#include "fddlab/numerics/tape.hpp"

#include <stdexcept>

#include "fddlab/errors.hpp"

namespace fddlab::num {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active) { g_active = nullptr; }
NoTapeScope::~NoTapeScope() { g_active = previous_; }

std::span<const float> Gradients::of(const Tensor& t) const {
  auto it = map_.find(t.id());
  if (it == map_.end()) return {};
  return it->second;
}

Tensor Gradients::tensor(const Tensor& t) const {
  auto it = map_.find(t.id());
  if (it == map_.end()) return Tensor::zeros(t.shape());
  return Tensor::from(t.shape(), std::span<const float>(it->second));
}

void Tape::record(const Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  if (max_entries_ != 0 && entries_.size() >= max_entries_) {
    throw std::length_error("tape overflow: more than " + std::to_string(max_entries_) + " recorded ops");
  }
  Entry e;
  e.out = out.node();
  e.inputs.reserve(inputs.size());
  for (auto& t : inputs) e.inputs.push_back(t.node());
  e.fn = std::move(fn);
  entries_.push_back(std::move(e));
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + to_string(loss.shape()));
  if (entries_.empty()) throw std::logic_error("backward on an empty tape");

  Gradients grads;
  auto& map = grads.map_;
  map[loss.id()] = Buffer(1, 1.0f);

  std::vector<float*> slots;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = map.find(it->out.get());
    if (found == map.end()) continue;
    Buffer gout = std::move(found->second);
    map.erase(found);

    slots.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const auto& in = it->inputs[i];
      if (!in->requires_grad) continue;
      auto& buf = map[in.get()];
      if (buf.empty()) buf.assign(in->storage->size(), 0.0f);
      slots[i] = buf.data();
    }
    it->fn(gout, slots);
  }
  return grads;
}

}  // namespace fddlab::num
