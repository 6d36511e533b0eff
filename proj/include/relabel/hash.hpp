#pragma once

#include <cstdint>
#include <string_view>

#include "relabel/types.hpp"

namespace relabel {

Digest sha256(std::string_view bytes);

// Non-cryptographic 64-bit hash (FNV-1a folded through a splitmix finalizer).
// Stable across platforms; used for feature hashing, MinHash and seeded
// per-item randomness.
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed = 0);

std::uint64_t mix64(std::uint64_t x);

// Uniform double in [0, 1) derived from a 64-bit value.
inline double unit_interval(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace relabel
