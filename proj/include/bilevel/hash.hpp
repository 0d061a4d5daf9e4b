#pragma once

// FNV-1a, used for problem fingerprints and config hashes. Stable across
// platforms and runs, unlike std::hash.

#include <cstdint>
#include <cstring>
#include <string_view>

namespace bilevel {

inline constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t value, std::uint64_t h = kFnvOffset) {
  char buf[8];
  std::memcpy(buf, &value, 8);
  return fnv1a(std::string_view(buf, 8), h);
}

inline std::uint64_t fnv1a_double(double value, std::uint64_t h = kFnvOffset) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, 8);
  return fnv1a_u64(bits, h);
}

}  // namespace bilevel
