#pragma once

#include <string>

#include "lidiff/tensor.hpp"

namespace lidiff {

// Portable tensor file format "LTF": magic "LTF1", u32 rank, rank x u64 dims,
// then little-endian float32 payload in row-major order.
void write_ltf(const std::string& path, const Tensor& t);
Tensor read_ltf(const std::string& path);

}  // namespace lidiff
