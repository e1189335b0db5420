#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace deepfpft {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a named stream.
///
/// All randomness in the pipeline descends from one master seed through
/// calls like `derive_seed(master, "forces/train", i)`; the result depends
/// only on its arguments, so sample i gets the same stream whatever order
/// or thread generates it.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream,
                          std::uint64_t index);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace deepfpft
