#pragma once

#include <cstdint>
#include <random>

namespace aotmem {

// Seedable, splittable random stream. Every stochastic routine takes one of
// these (or a seed) explicitly; streams are values and are never shared
// between threads. Draws are derived from raw engine bits so results do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  // Independent child stream; the parent is not advanced.
  Rng split(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform();
  // (0, 1)
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double log_uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform in [0, n).
  std::uint64_t index(std::uint64_t n);
  // ±1 with equal probability.
  double sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace aotmem
