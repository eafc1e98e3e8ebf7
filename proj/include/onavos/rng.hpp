#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace onavos {

/// Counter-based generator built on the SplitMix64 finalizer.
///
/// The n-th draw of a stream is `mix64(key + (n + 1) * 0x9E3779B97F4A7C15)`,
/// so a stream is fully described by its 64-bit key and position. Child
/// streams are derived with `split(label)` / `split(index)`, which hash the
/// parent key with the label (FNV-1a) or index and never touch the parent's
/// counter. Nothing here depends on the standard library's distributions,
/// whose output differs between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(key) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses the multiply-high reduction.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per two draws, no caching so
  /// the stream position stays a pure function of the number of calls).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Rng split(std::string_view label) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return Rng(mix64(key_ ^ mix64(h)));
  }

  Rng split(std::uint64_t index) const {
    return Rng(mix64(key_ ^ mix64(index + 0xD1B54A32D192ED03ULL)));
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace onavos
