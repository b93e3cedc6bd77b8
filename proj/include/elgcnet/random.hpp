#pragma once

// Seeded RNG helpers. Gaussian draws are hand-rolled (Box-Muller over
// mt19937_64 bits) so that seeded runs are bit-reproducible independent of
// the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <random>

#include "elgcnet/tensor.hpp"

namespace elgc {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return double(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi_inclusive) {
    const std::uint64_t span = std::uint64_t(hi_inclusive - lo) + 1;
    return lo + int(engine_() % span);
  }

  bool coin() { return (engine_() & 1u) != 0; }

  double normal() {
    // Box-Muller; one value per call keeps the stream layout obvious.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Normal(0, std^2) truncated to +-2 std by resampling.
  double trunc_normal(double stddev) {
    double z = normal();
    while (std::abs(z) > 2.0) z = normal();
    return z * stddev;
  }

  // Derive an independent stream (e.g. per epoch) without disturbing this one.
  Rng fork(std::uint64_t salt) const {
    std::mt19937_64 probe = engine_;
    return Rng(probe() ^ (salt * 0x9e3779b97f4a7c15ull));
  }

 private:
  std::mt19937_64 engine_;
};

template <class T>
Tensor<T> randn(Rng& rng, Shape shape, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <class T>
Tensor<T> rand_uniform(Rng& rng, Shape shape, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace elgc
