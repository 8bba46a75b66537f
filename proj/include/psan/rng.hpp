#ifndef PSAN_RNG_HPP
#define PSAN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace psan {

namespace detail {

// SplitMix64 finalizer (Steele et al.), used both as the stream generator and
// as the mixer that derives substream states from (seed, tag, index).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

} // namespace detail

// One independent SplitMix64 stream. Every draw advances the state by a fixed
// amount, so the sequence depends only on the initial state, never on how
// calls from different streams interleave.
class RngStream {
public:
  explicit RngStream(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53 usable bits
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in (0, 1], avoids log(0) in Box-Muller
  double next_double_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Box-Muller; consumes exactly two draws per normal so streams stay aligned
  double next_normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = next_double_open();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // modulo bias is < 2^-32 for the ranges used here (n well below 2^32)
    return next_u64() % n;
  }

private:
  std::uint64_t state_;
};

// Root randomness object: a 64-bit seed from which substreams are derived by
// (purpose tag, index) keys. Identical (seed, tag, index) always yields an
// identical stream regardless of creation order or thread schedule.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  RngStream stream(std::string_view tag, std::uint64_t index = 0,
                   std::uint64_t subindex = 0) const {
    std::uint64_t h = detail::mix64(seed_ ^ detail::fnv1a64(tag));
    h = detail::mix64(h ^ index);
    h = detail::mix64(h ^ subindex);
    return RngStream(h);
  }

private:
  std::uint64_t seed_;
};

} // namespace psan

#endif
