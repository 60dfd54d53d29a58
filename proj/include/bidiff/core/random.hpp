#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (key, counter), so parallel loops produce the same values regardless of
// thread count or traversal order.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>

namespace bidiff {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

/// FNV-1a; used to turn stream names into keys.
inline constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// A keyed stream of random numbers addressed by an integer counter.
class RandomStream {
 public:
  constexpr RandomStream() = default;
  constexpr explicit RandomStream(std::uint64_t key) : key_(key) {}

  constexpr std::uint64_t key() const { return key_; }

  /// Derives an independent child stream.
  constexpr RandomStream fork(std::uint64_t tag) const { return RandomStream(hash_combine(key_, tag)); }
  constexpr RandomStream fork(std::string_view tag) const { return fork(hash_string(tag)); }

  constexpr std::uint64_t bits(std::uint64_t counter) const { return hash_combine(key_, counter); }

  /// Uniform in [0, 1).
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

  /// Standard normal via Box-Muller on two sub-counters.
  double normal(std::uint64_t counter) const {
    const std::uint64_t c = counter * 2;
    double u1 = uniform(c);
    const double u2 = uniform(c + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void fill_normal(std::span<T> out) const {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(normal(i));
  }

 private:
  std::uint64_t key_ = 0x5eed;
};

/// Sequential convenience wrapper for code that just needs "the next number".
class Sequence {
 public:
  explicit Sequence(RandomStream stream) : stream_(stream) {}
  explicit Sequence(std::uint64_t key) : stream_(key) {}

  double uniform() { return stream_.uniform(counter_++); }
  double uniform(double lo, double hi) { return stream_.uniform(counter_++, lo, hi); }
  double normal() { return stream_.normal(counter_++); }
  std::uint64_t bits() { return stream_.bits(counter_++); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : bits() % n; }

  const RandomStream& stream() const { return stream_; }

 private:
  RandomStream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace bidiff
