#include "cmtf/rng.hpp"

namespace cmtf {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream,
                         std::uint64_t index) {
  std::uint64_t state = seed;
  std::uint64_t mixed = splitmix64(state);
  state ^= static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL;
  mixed ^= splitmix64(state);
  state ^= index * 0x9e3779b97f4a7c15ULL;
  mixed ^= splitmix64(state);
  return std::mt19937_64(mixed);
}

}  // namespace cmtf
