#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lensnvs {

/// SplitMix64 finalizer; a good bijective mixer for deriving seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over bytes.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for a named random substream ("noise", "init", "sampling", ...) so
/// that toggling one consumer never shifts the draws of another.
constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                       std::uint64_t index = 0) {
  return mix64(mix64(root ^ fnv1a(name)) + index);
}

using Rng = std::mt19937_64;

}  // namespace lensnvs
