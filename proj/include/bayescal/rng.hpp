#pragma once

#include <cstdint>
#include <random>

#include "bayescal/diff/array.hpp"

namespace bayescal {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based child seed: a pure function of (master, stream, index), so
/// parallel consumers get the same stream regardless of scheduling order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(master) ^ (stream * 0x632be59bd9b4e019ULL)) + index);
}

/// Named streams for derive_seed.
namespace stream {
inline constexpr std::uint64_t encoder = 1;
inline constexpr std::uint64_t category_text = 2;
inline constexpr std::uint64_t environment_text = 3;
inline constexpr std::uint64_t init = 4;
inline constexpr std::uint64_t sampling = 5;
inline constexpr std::uint64_t few_shot = 6;
inline constexpr std::uint64_t search = 7;
inline constexpr std::uint64_t semantics = 8;
inline constexpr std::uint64_t split = 9;
}  // namespace stream

inline diff::Array normal_array(Rng& rng, diff::Shape shape, double sd = 1.0, double mean = 0.0) {
  std::normal_distribution<double> n(mean, sd);
  diff::Array a(shape);
  for (auto& v : a.data()) v = n(rng);
  return a;
}

}  // namespace bayescal
