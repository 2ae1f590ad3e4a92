#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace mcqa {

// SplitMix64 used as a counter-based generator: the k-th output of stream
// `seed` is mix(seed + (k + 1) * 0x9E3779B97F4A7C15). Everything that needs
// reproducible randomness (subsampling, calibration splits, noise studies)
// draws from this and nothing else, so results are identical on every
// platform. Do not change the constants or the derivations below.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform in [0, bound) by rejection; bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two outputs per call.
  double normal();

 private:
  std::uint64_t state_;
};

// Fisher-Yates from the back: for i = n-1 .. 1 swap(i, below(i + 1)).
template <typename T>
void shuffle(std::span<T> values, SplitMix64& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(values[i - 1], values[j]);
  }
}

}  // namespace mcqa
