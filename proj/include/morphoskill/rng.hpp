#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace morphoskill {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 1469598103934665603ULL) noexcept {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Named, position-addressed seed streams.
///
/// Every draw in a run is seeded from (master seed, stream name, generation,
/// index) rather than from a shared mutable engine, so the number of draws in
/// one stream never shifts another stream, and a resumed run reproduces the
/// same seeds as an uninterrupted one.
class SeedStreams {
 public:
  explicit SeedStreams(std::uint64_t master_seed) : master_(master_seed) {}

  std::uint64_t master() const noexcept { return master_; }

  std::uint64_t seed(std::string_view stream, std::uint64_t generation, std::uint64_t index) const noexcept {
    std::uint64_t h = splitmix64(master_ ^ fnv1a(stream));
    h = splitmix64(h ^ generation);
    return splitmix64(h ^ (index * 0xD1B54A32D192ED03ULL));
  }

  Rng engine(std::string_view stream, std::uint64_t generation, std::uint64_t index) const {
    return Rng{seed(stream, generation, index)};
  }

 private:
  std::uint64_t master_;
};

namespace streams {
inline constexpr std::string_view kInit = "init";
inline constexpr std::string_view kPathB = "path_b";
inline constexpr std::string_view kPathAFallback = "path_a_fallback";
inline constexpr std::string_view kSampling = "sampling";
inline constexpr std::string_view kEvaluator = "evaluator";
inline constexpr std::string_view kBackend = "backend";
}  // namespace streams

}  // namespace morphoskill
