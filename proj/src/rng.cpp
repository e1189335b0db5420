#include "deepfpft/rng.hpp"

namespace deepfpft {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream) {
  return mix64(mix64(parent) ^ fnv1a(stream));
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream,
                          std::uint64_t index) {
  return mix64(derive_seed(parent, stream) ^ mix64(index + 1));
}

}  // namespace deepfpft
