#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fddlab/numerics/tensor.hpp"

namespace fddlab::num {

// "FDT1" tensor files: magic, u8 rank, rank x u32 LE extents, f32 LE
// payload in row-major order.

std::vector<std::uint8_t> encode_fdt1(const Tensor& t);
Tensor decode_fdt1(std::span<const std::uint8_t> bytes);

void write_fdt1(const std::filesystem::path& path, const Tensor& t);
Tensor read_fdt1(const std::filesystem::path& path);

}  // namespace fddlab::num
