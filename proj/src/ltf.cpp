#include "lidiff/ltf.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lidiff {

static_assert(std::endian::native == std::endian::little,
              "LTF I/O assumes a little-endian host");

void write_ltf(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  LIDIFF_CHECK(f.good(), "cannot open ", path, " for writing");
  f.write("LTF1", 4);
  uint32_t rank = static_cast<uint32_t>(t.rank());
  f.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (int i = 0; i < t.rank(); ++i) {
    uint64_t d = static_cast<uint64_t>(t.dim(i));
    f.write(reinterpret_cast<const char*>(&d), sizeof d);
  }
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  LIDIFF_CHECK(f.good(), "write failed for ", path);
}

Tensor read_ltf(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  LIDIFF_CHECK(f.good(), "cannot open ", path);
  char magic[4];
  f.read(magic, 4);
  LIDIFF_CHECK(f.gcount() == 4 && std::memcmp(magic, "LTF1", 4) == 0,
               path, ": not an LTF file (bad magic)");
  uint32_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), sizeof rank);
  LIDIFF_CHECK(f.good() && rank <= 8, path, ": unreasonable rank ", rank);
  Shape shape(rank);
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint64_t d = 0;
    f.read(reinterpret_cast<char*>(&d), sizeof d);
    LIDIFF_CHECK(f.good() && d <= (1ull << 32), path, ": bad dimension");
    shape[i] = static_cast<int64_t>(d);
    n *= shape[i];
  }
  std::vector<float> values(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(values.data()),
         static_cast<std::streamsize>(n * sizeof(float)));
  LIDIFF_CHECK(f.gcount() == static_cast<std::streamsize>(n * sizeof(float)),
               path, ": truncated payload, expected ", n * sizeof(float), " bytes");
  return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace lidiff
