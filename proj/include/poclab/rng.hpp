#pragma once

#include <cmath>
#include <cstdint>

namespace poclab {

// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
// so parallel shards and re-runs are bit-reproducible.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(mix(seed + 0x9e3779b97f4a7c15ULL) ^ mix(stream + 0x2545f4914f6cdd1dULL))) {}

  std::uint64_t bits(std::uint64_t counter) const {
    return mix(key_ ^ mix(counter + 0x6a09e667f3bcc909ULL));
  }

  // Uniform in (0, 1); never returns exactly 0 or 1.
  double uniform(std::uint64_t counter) const {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; draws (2*counter, 2*counter+1).
  double gaussian(std::uint64_t counter) const {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Rademacher +/-1.
  double sign(std::uint64_t counter) const {
    return (bits(counter) & 1ULL) ? 1.0 : -1.0;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

// Sequential convenience wrapper over CounterRng.
class SequentialRng {
 public:
  explicit SequentialRng(std::uint64_t seed, std::uint64_t stream = 0) : rng_(seed, stream) {}
  double uniform() { return rng_.uniform(ctr_++); }
  double gaussian() { return rng_.gaussian(ctr_++); }
  std::uint64_t bits() { return rng_.bits(ctr_++); }
  // Uniform integer in [0, n) by rejection-free scaling (n << 2^64 here).
  std::uint64_t below(std::uint64_t n) { return rng_.bits(ctr_++) % n; }

 private:
  CounterRng rng_;
  std::uint64_t ctr_ = 0;
};

}  // namespace poclab
