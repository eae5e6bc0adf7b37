#pragma once

// Counter-based deterministic RNG. Monte Carlo runs derive one independent
// stream per path by mixing (seed, stream index) through a 64-bit finalizer,
// so results are reproducible and paths can be simulated in any order.

#include <cmath>
#include <cstdint>

namespace lcrt {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform on [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1]
  double uniform_pos() { return 1.0 - uniform01(); }

  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

 private:
  std::uint64_t state_;
};

// Stream `stream` of a master seed; extra `salt` separates estimator roles
// (paths, quadrature nodes, batches) sharing one master seed.
inline SplitMix64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0) {
  return SplitMix64(mix64(seed ^ mix64(stream ^ mix64(salt))));
}

}  // namespace lcrt
