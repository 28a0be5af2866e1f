#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace normlab {

// Deterministic random source. The mt19937_64 engine is fully specified by
// the standard; the distribution transforms are written out here because the
// standard library leaves std::*_distribution implementation-defined and
// every run of the harness must be reproducible bit for bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // Integer in [0, n), rejection-sampled so the result is unbiased.
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<size_t> permutation(size_t n) {
    std::vector<size_t> p(n);
    std::iota(p.begin(), p.end(), size_t{0});
    for (size_t i = n; i > 1; --i) {
      std::swap(p[i - 1], p[static_cast<size_t>(below(i))]);
    }
    return p;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable derivation of per-purpose seeds from a run seed, so that e.g. the
// epoch-7 shuffle never depends on how much randomness epoch 6 consumed.
inline uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t index = 0) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1) + 0xbf58476d1ce4e5b9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace normlab
