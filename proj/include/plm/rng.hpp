#pragma once

#include <cstdint>
#include <string_view>

namespace plm {

// Deterministic random numbers. Every random decision in the pipeline is
// drawn from a stream derived from (root seed, stream name [, index]), so
// runs with the same seed reproduce byte-for-byte regardless of call order
// elsewhere.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// xoshiro-free minimal generator: splitmix64 over an advancing state.
/// Small, fast, and identical on every platform.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(uniform_index(
                    static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  bool coin() { return (next_u64() & 1) != 0; }

private:
  std::uint64_t state_;
};

/// Derives the seed of a named substream from a root seed.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t x = root ^ detail::fnv1a64(name);
  return detail::splitmix64(x);
}

inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                    std::uint64_t index) {
  std::uint64_t x = substream_seed(root, name) ^
                    (0x9e3779b97f4a7c15ULL * (index + 1));
  return detail::splitmix64(x);
}

inline Rng substream(std::uint64_t root, std::string_view name) {
  return Rng(substream_seed(root, name));
}

inline Rng substream(std::uint64_t root, std::string_view name,
                     std::uint64_t index) {
  return Rng(substream_seed(root, name, index));
}

}  // namespace plm
