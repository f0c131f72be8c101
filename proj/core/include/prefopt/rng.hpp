#pragma once

#include <cstdint>
#include <random>

namespace prefopt {

using Rng = std::mt19937_64;

/// Independent sub-streams derived from a single run seed.
enum class Stream : std::uint64_t {
  labeling = 1,
  order = 2,
  init = 3,
  jitter = 4,
  sampling = 5,
  instances = 6,
};

/// splitmix64 finalizer; used to decorrelate (seed, stream) pairs.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  return Rng(mix_seed(seed ^ mix_seed(static_cast<std::uint64_t>(stream))));
}

}  // namespace prefopt
