#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "fddlab/numerics/adam.hpp"
#include "fddlab/numerics/rng.hpp"

namespace fddlab::models {

using num::NamedTensor;
using num::Tensor;

/// Named parameters of one component, in insertion order. `tag` is one of
/// theta, theta_edit, theta_video, theta_align, D_e, D_v.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::string tag) : tag_(std::move(tag)) {}

  const std::string& tag() const { return tag_; }
  Tensor& add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  /// Throws std::out_of_range naming the component and parameter.
  const Tensor& at(const std::string& name) const;
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t numel() const;

  void set_trainable(bool on);
  bool trainable() const;
  /// Deep copy with fresh storage.
  ParamSet clone() const;
  std::uint64_t checksum() const;

 private:
  std::string tag_;
  std::vector<NamedTensor> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Initializers.
Tensor conv_weight(int co, int ci, int k, num::Rng& rng);
Tensor linear_weight(int out, int in, num::Rng& rng);

/// Checkpoint directory: one FDT1 file per tensor plus manifest.tsv with
/// columns tag, name, shape, file. Extra (non-parameter) tensors use tag
/// "meta".
void save_checkpoint(const std::filesystem::path& dir, const std::vector<const ParamSet*>& sets,
                     const std::vector<NamedTensor>& meta = {});
struct Checkpoint {
  std::unordered_map<std::string, ParamSet> sets;
  std::unordered_map<std::string, Tensor> meta;
  /// Throws MissingDependency when the component is absent.
  const ParamSet& get(const std::string& tag, const std::filesystem::path& dir) const;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace fddlab::models
