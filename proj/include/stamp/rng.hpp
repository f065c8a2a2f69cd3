#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace stamp {

/// 64-bit FNV-1a; used to key random streams by study id.
constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

/// Independent generator for a (seed, key...) tuple. Streams depend only on
/// the tuple, so any parallel schedule reproduces the same draws.
std::mt19937_64 make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

}  // namespace stamp
