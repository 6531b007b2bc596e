#pragma once

// Platform-independent random streams. The engine is std::mt19937_64, whose
// output sequence is fixed by the standard; the variate transforms below are
// written out by hand because the std::*_distribution algorithms are
// implementation-defined.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <string_view>

namespace avrc {

inline constexpr std::string_view kRngName = "mt19937_64+splitmix64";
inline constexpr int kRngVersion = 1;

/// Stream roles; the numeric values are part of the reproducibility contract.
enum class StreamRole : std::uint64_t {
  kTrainDesign = 1,
  kTestDesign = 2,
  kTrainLatent = 3,
  kTestLatent = 4,
  kCoefficients = 5,
  kLatentCoefficients = 6,
  kTrainNoise = 7,
  kTestNoise = 8,
  kReplicate = 9,
  kTheory = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic seed for the stream identified by (seed, keys...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t seed, StreamRole role, std::uint64_t index = 0)
      : engine_(derive_seed(seed, {static_cast<std::uint64_t>(role), index})) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace avrc
