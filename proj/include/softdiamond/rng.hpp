#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace softdiamond {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a 64-bit state into a well-distributed seed.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed of the child stream `name` (and optional index) under `root`.
/// Every random consumer in the project derives its generator this way so a
/// single root seed reproduces a whole run.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(root ^ hash_name(name)) + index);
}

inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  return Rng(derive_seed(root, name, index));
}

/// Uniform double in [0, 1) built from the top 53 bits. Used instead of
/// std::uniform_real_distribution so streams are identical across stdlibs.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Box-Muller standard normal (one value per call, the sine branch is dropped).
inline double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace softdiamond
