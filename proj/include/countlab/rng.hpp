#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace countlab {

uint64_t splitmix64(uint64_t x);

/// 64-bit FNV-1a.
uint64_t hash64(std::string_view bytes);
uint64_t hash_combine(uint64_t seed, uint64_t value);

/// Seeded generator. The engine is std::mt19937_64, whose output sequence is
/// fixed by the standard; the conversions to floating point below are ours so
/// results do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [lo, hi], unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi);
  /// Standard normal via Box-Muller (one value per call).
  double normal();

  /// Independent child stream for a given index.
  Rng substream(uint64_t index) const;

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

/// Counter-based standard normal: a pure function of (key, counter).
double counter_normal(uint64_t key, uint64_t counter);

}  // namespace countlab
