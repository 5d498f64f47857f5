#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fmirl {

/// Seeded random stream. Every stochastic operation takes one of these by
/// reference so that a run is fully determined by its root seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)), stream_base_(seed) {}

  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  // Index in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  /// Independent child stream keyed by a label; the parent state is not advanced.
  Rng fork(std::string_view label) const { return Rng(seed_of(label)); }
  Rng fork(std::uint64_t stream) const { return Rng(mix(stream_base_ ^ (stream * 0x9E3779B97F4A7C15ULL))); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_of(std::string_view label) const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ stream_base_;
    for (char ch : label) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::uint64_t stream_base_ = 0;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fmirl
