#include "fddlab/numerics/fdt1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "fddlab/errors.hpp"

namespace fddlab::num {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_fdt1(const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("FDT1 supports rank <= 255");
  std::vector<std::uint8_t> out{'F', 'D', 'T', '1', static_cast<std::uint8_t>(t.rank())};
  out.reserve(5 + 4 * t.rank() + 4 * t.numel());
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_fdt1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), "FDT1", 4) != 0) {
    throw std::runtime_error("not an FDT1 stream (bad magic)");
  }
  const int rank = bytes[4];
  std::size_t pos = 5;
  if (bytes.size() < pos + 4 * static_cast<std::size_t>(rank)) throw std::runtime_error("FDT1: truncated header");
  Shape shape(rank);
  for (int i = 0; i < rank; ++i, pos += 4) shape[i] = static_cast<int>(get_u32(bytes.data() + pos));
  const std::size_t n = numel(shape);
  if (bytes.size() != pos + 4 * n) throw std::runtime_error("FDT1: payload size does not match header");
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4) values[i] = std::bit_cast<float>(get_u32(bytes.data() + pos));
  return Tensor::from(std::move(shape), std::move(values));
}

void write_fdt1(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_fdt1(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_fdt1(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingDependency(path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_fdt1(bytes);
}

}  // namespace fddlab::num
