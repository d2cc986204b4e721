#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mixturelab {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a path of
/// indices (phase, cell, replicate, start, ...). Streams never depend on
/// which thread consumes them.
inline std::uint64_t stream_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(root);
  for (std::uint64_t v : path) h = mix64(h ^ mix64(v + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t root,
                    std::initializer_list<std::uint64_t> path) {
  return Rng(stream_seed(root, path));
}

}  // namespace mixturelab
