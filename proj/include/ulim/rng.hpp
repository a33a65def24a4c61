#pragma once

#include <cstdint>
#include <random>

namespace ulim {

// All randomness in the project flows through this wrapper so results are a
// pure function of the seed. std::mt19937_64 output is pinned by the
// standard; the uniform mappings below avoid the implementation-defined
// std::uniform_*_distribution.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // [0, n); modulo bias is negligible for n << 2^64
  std::uint64_t next_below(std::uint64_t n) { return engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

// Stateless mix for deriving independent sub-seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + salt * 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace ulim
