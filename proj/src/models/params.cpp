#include "fddlab/models/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/fdt1.hpp"

namespace fddlab::models {

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument(tag_ + ": duplicate parameter " + name);
  index_[name] = items_.size();
  items_.push_back({name, std::move(t)});
  return items_.back().tensor;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range(tag_ + ": no parameter " + name);
  return items_[it->second].tensor;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

void ParamSet::set_trainable(bool on) {
  for (auto& p : items_) p.tensor.set_requires_grad(on);
}

bool ParamSet::trainable() const {
  for (const auto& p : items_) {
    if (p.tensor.requires_grad()) return true;
  }
  return false;
}

ParamSet ParamSet::clone() const {
  ParamSet out(tag_);
  for (const auto& p : items_) out.add(p.name, p.tensor.clone());
  return out;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : items_) {
    for (unsigned char c : p.name) h = (h ^ c) * 1099511628211ull;
    h = (h ^ num::checksum(p.tensor)) * 1099511628211ull;
  }
  return h;
}

Tensor conv_weight(int co, int ci, int k, num::Rng& rng) {
  const float bound = static_cast<float>(std::sqrt(3.0 / (ci * k * k)));
  return num::rand_uniform({co, ci, k, k}, rng, -bound, bound);
}

Tensor linear_weight(int out, int in, num::Rng& rng) {
  const float bound = static_cast<float>(std::sqrt(3.0 / in));
  return num::rand_uniform({out, in}, rng, -bound, bound);
}

namespace {

std::string file_name(const std::string& tag, const std::string& name) { return tag + "__" + name + ".fdt"; }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::vector<const ParamSet*>& sets,
                     const std::vector<NamedTensor>& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  manifest << "tag\tname\tshape\tfile\n";
  auto emit = [&](const std::string& tag, const NamedTensor& p) {
    const std::string file = file_name(tag, p.name);
    num::write_fdt1(dir / file, p.tensor);
    manifest << tag << '\t' << p.name << '\t' << num::to_string(p.tensor.shape()) << '\t' << file << '\n';
  };
  for (const ParamSet* s : sets) {
    for (const auto& p : s->items()) emit(s->tag(), p);
  }
  for (const auto& m : meta) emit("meta", m);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.tsv").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.tsv";
  std::ifstream in(path);
  if (!in) throw MissingDependency(path.string());
  Checkpoint ck;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string tag, name, shape, file;
    std::getline(row, tag, '\t');
    std::getline(row, name, '\t');
    std::getline(row, shape, '\t');
    std::getline(row, file, '\t');
    Tensor t = num::read_fdt1(dir / file);
    if (num::to_string(t.shape()) != shape) {
      throw std::runtime_error(file + ": shape " + num::to_string(t.shape()) + " disagrees with manifest " + shape);
    }
    if (tag == "meta") {
      ck.meta[name] = t;
    } else {
      auto [it, _] = ck.sets.try_emplace(tag, ParamSet(tag));
      it->second.add(name, t);
    }
  }
  return ck;
}

const ParamSet& Checkpoint::get(const std::string& tag, const std::filesystem::path& dir) const {
  auto it = sets.find(tag);
  if (it == sets.end()) throw MissingDependency((dir / ("<" + tag + ">")).string());
  return it->second;
}

}  // namespace fddlab::models
