#include "maedet/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "maedet/errors.hpp"

namespace maedet {

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw ConfigError("uniform_int: n must be positive");
  // rejection sampling to avoid modulo bias
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // Box-Muller; the spare value is discarded so the state is the engine alone.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev) {
  double z;
  do {
    z = normal();
  } while (z < -2.0 || z > 2.0);
  return z * stddev;
}

double Rng::gamma(double k, double theta) {
  if (k <= 0.0 || theta <= 0.0) throw ConfigError("gamma: k, theta must be positive");
  if (k < 1.0) {
    // Boost shape by one, then apply the standard power correction.
    const double u = uniform();
    return gamma(k + 1.0, theta) * std::pow(u, 1.0 / k);
  }
  // Marsaglia-Tsang squeeze method
  const double d = k - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * theta;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * theta;
  }
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(uniform_int(static_cast<uint64_t>(i) + 1));
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t m) {
  if (m > n) m = n;
  auto p = permutation(n);
  p.resize(static_cast<size_t>(m));
  return p;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw CheckpointError("Rng::set_state: malformed state string");
}

uint64_t Rng::mix(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over the combined value
  uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace maedet
