#pragma once

#include <cstdint>
#include <vector>

namespace ampattn {

/// Deterministic PRNG (splitmix64 stream). All randomness in the project goes
/// through this type so that a (seed, call-order) pair fully pins every run,
/// independent of platform or standard-library distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);
  /// Standard normal via Box-Muller (one spare cached).
  double normal();

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(0, i);
      std::swap(v[i], v[j]);
    }
  }

  /// Derive an independent stream seed from a base seed and a stream index.
  static uint64_t derive(uint64_t base, uint64_t stream);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ampattn
