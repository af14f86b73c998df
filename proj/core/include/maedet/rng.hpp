#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace maedet {

/// Deterministic random source. Wraps std::mt19937_64 but implements all
/// distributions by hand so that sequences are identical across standard
/// library implementations (std::*_distribution is not portable).
class Rng {
public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n);

  /// Standard normal via Box-Muller (no state beyond the engine).
  double normal();

  /// Normal truncated to [-2, 2] standard deviations, then scaled.
  double truncated_normal(double stddev);

  /// Gamma(shape k, scale theta) via Marsaglia-Tsang.
  double gamma(double k, double theta);

  /// Fisher-Yates permutation of {0..n-1}.
  std::vector<int64_t> permutation(int64_t n);

  /// Sample m distinct indices from {0..n-1} without replacement.
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t m);

  /// Engine state as text, for checkpointing.
  std::string state() const;
  void set_state(const std::string& s);

  /// Deterministic stream derivation, e.g. per (seed, epoch, item).
  static uint64_t mix(uint64_t a, uint64_t b);

private:
  std::mt19937_64 engine_;
};

}  // namespace maedet
