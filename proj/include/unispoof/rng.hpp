#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>

namespace unispoof {

// splitmix64 finalizer; also used to derive independent sub-stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, for turning stream names into seed tweaks.
constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tweak) {
  return mix64(seed ^ mix64(tweak + 0x9e3779b97f4a7c15ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return derive_seed(seed, hash_name(name));
}

// Counter-based splitmix64 stream. Every draw is a pure function of
// (seed, counter), so results do not depend on the platform's <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix64(seed_ + counter_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return n == 0 ? 0 : static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  // Box-Muller; one fresh pair per call keeps the stream position predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Normal truncated to [-2 sigma, 2 sigma] by resampling.
  double truncated_normal(double sigma) {
    for (;;) {
      double z = normal();
      if (z >= -2.0 && z <= 2.0) return z * sigma;
    }
  }

  // Fisher-Yates, driven by this stream.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

  Rng split(std::string_view name) const { return Rng(derive_seed(seed_ + counter_, name)); }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace unispoof
