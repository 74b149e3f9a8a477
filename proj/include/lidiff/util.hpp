#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidiff {

// Project-wide error type. Everything user-recoverable throws this;
// the CLI maps it to exit code 1 (or 2 for usage problems).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string format_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

#define LIDIFF_CHECK(cond, ...)                                   \
  do {                                                            \
    if (!(cond)) throw ::lidiff::Error(::lidiff::format_msg(__VA_ARGS__)); \
  } while (0)

// FNV-1a, used for parameter-name seeding and checkpoint payload hashes.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Deterministic RNG wrapper. All stochastic behavior in the library is
// seeded through this so runs are reproducible bit-for-bit on one platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  float uniform(float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(gen_);
  }
  float normal(float mean, float sd) {
    std::normal_distribution<float> d(mean, sd);
    return d(gen_);
  }
  int64_t randint(int64_t lo, int64_t hi) {  // inclusive bounds
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }

 private:
  std::mt19937_64 gen_;
};

// Stable per-name seed: independent of parameter creation order, so two model
// variants that share a subset of parameters initialize that subset identically.
inline uint64_t name_seed(const std::string& name, uint64_t global_seed) {
  return fnv1a64(name) ^ (global_seed * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull);
}

}  // namespace lidiff
