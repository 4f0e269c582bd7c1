#pragma once

#include <cstdint>
#include <random>

namespace cmtf {

/// Named random sub-streams. Every source of randomness in the library is
/// derived from one user seed plus a stream tag (and, for per-epoch
/// streams, the epoch number), so commands are reproducible end to end.
enum class RngStream : std::uint64_t {
  Init = 0x01,
  Shuffle = 0x02,
  Split = 0x03,
  Synth = 0x04,
  Bench = 0x05,
};

std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream,
                         std::uint64_t index = 0);

/// Uniform double in [0, 1), built from the generator's top 53 bits so the
/// mapping is identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n). n must be positive.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(rng()) * n) >> 64);
}

}  // namespace cmtf
