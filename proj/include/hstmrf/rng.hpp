#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hstmrf {

/// Seeded, splittable generator. The same seed yields a bit-identical stream
/// on every platform: the engine is std::mt19937_64 and all derived draws are
/// computed here rather than through implementation-defined distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t seed() const { return seed_; }

  /// Independent child stream keyed by `key`; does not advance this stream.
  Rng split(uint64_t key) const;
  Rng split(std::string_view key) const;

  uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();
  /// Normal(0, std) resampled until within +-2 std.
  double truncated_normal(double std);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

uint64_t hash_key(std::string_view key);

}  // namespace hstmrf
