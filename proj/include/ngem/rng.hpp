#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

// Deterministic random number generation.  All randomness in the library goes
// through these types so that a run is reproducible bit-for-bit from its seed
// on any platform.  std::mt19937 + std::*_distribution are avoided on purpose:
// the distributions are implementation-defined and break cross-toolchain
// reproducibility.

namespace ngem {

// Finalizing 64-bit mixer (splitmix64).  Bijective, so distinct inputs give
// distinct outputs; used both as a PRNG step and to derive stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream key from a base seed and a purpose tag, so the
// same user-facing seed can drive data generation, weight init, batching, ...
// without the streams aliasing each other.
constexpr std::uint64_t substream(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

// Counter-based generator: the value at counter c is a pure function of
// (key, c).  Lets Monte-Carlo loops address sample i directly, independent of
// evaluation order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t bits(std::uint64_t counter) const { return mix64(key_ + 0x632be59bd9b4e019ull * (counter + 1)); }

  // Uniform on [0,1), 53-bit resolution.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Uniform on (0,1]; safe as a log() argument.
  double uniform_pos(std::uint64_t counter) const {
    return static_cast<double>((bits(counter) >> 11) + 1) * 0x1.0p-53;
  }

  // Pair of independent standard normals (Box-Muller) from counters 2c, 2c+1.
  std::pair<double, double> normal_pair(std::uint64_t counter) const {
    const double u1 = uniform_pos(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

  double normal(std::uint64_t counter) const { return normal_pair(counter).first; }

 private:
  std::uint64_t key_;
};

// Sequential convenience wrapper over the same core.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : core_(mix64(seed)), counter_(0) {}

  std::uint64_t next_u64() { return core_.bits(counter_++); }

  double uniform() { return core_.uniform(counter_++); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = core_.uniform_pos(counter_++);
    const double u2 = core_.uniform(counter_++);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).  Modulo bias is ~n/2^64, irrelevant here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  template <typename Seq>
  void shuffle(Seq& v) {  // Fisher-Yates
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  CounterRng core_;
  std::uint64_t counter_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ngem
