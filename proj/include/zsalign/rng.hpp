#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace zsalign {

// Deterministic random source. All randomness in the engine flows through
// this class so that runs are bit-reproducible for a given seed; the
// gaussian and shuffle algorithms are fixed here instead of delegating to
// the implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via the Marsaglia polar method.
  double gaussian();

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::size_t uniform_index(std::size_t n);

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream seed from (seed, salt). splitmix64 finalizer.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace zsalign
