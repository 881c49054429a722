#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include <boost/random/normal_distribution.hpp>

namespace translab {

/// Stafford "mix13" finalizer, the output function of SplitMix64.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a user seed and a tuple of
/// indices (replica, cell, purpose...). Order of the indices matters.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0,
                                   std::uint64_t c = 0) noexcept {
  std::uint64_t k = mix64(seed ^ 0x6A09E667F3BCC908ull);
  k = mix64(k ^ (a + 0x9E3779B97F4A7C15ull));
  k = mix64(k ^ (b + 0x3C6EF372FE94F82Bull));
  k = mix64(k ^ (c + 0xA54FF53A5F1D36F1ull));
  return k;
}

/// Counter-based 64-bit generator: the n-th output is a pure function of
/// (key, n), so a stream can be positioned anywhere without replaying it.
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

/// Random stream owned by one trajectory: uniforms and standard normals
/// drawn from a single counter-based generator.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) noexcept : engine_(key) {}
  RandomStream(std::uint64_t seed, std::uint64_t replica,
               std::uint64_t purpose = 0) noexcept
      : engine_(stream_key(seed, replica, purpose)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }

  CounterRng& engine() noexcept { return engine_; }

 private:
  CounterRng engine_;
  boost::random::normal_distribution<double> normal_;
};

}  // namespace translab
