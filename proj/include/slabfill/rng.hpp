#ifndef SLABFILL_RNG_HPP
#define SLABFILL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace slabfill {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a stream tag.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
  return splitmix64(splitmix64(base) ^ splitmix64(~tag));
}

// Deterministic random stream. Distributions are hand-rolled on top of
// mt19937_64 so that outputs do not depend on the standard library's
// distribution internals: fixed seed means fixed byte-identical results.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi], inclusive, rejection-sampled (no modulo bias)
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit span
    const uint64_t threshold = (-range) % range;
    uint64_t r;
    do {
      r = next_u64();
    } while (r < threshold);
    return lo + static_cast<int64_t>(r % range);
  }

  // standard normal via Box-Muller; consumes exactly two draws per call
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stdev) { return mean + stdev * normal(); }

 private:
  std::mt19937_64 gen_;
};

// Counter-based standard normal: a pure function of (seed, index). Lets
// voxel-wise noise be generated in parallel with a result independent of
// iteration order.
inline double gaussian_at(uint64_t seed, uint64_t index) {
  const uint64_t h1 = splitmix64(seed ^ splitmix64(index));
  const uint64_t h2 = splitmix64(h1 + 0x632be59bd9b4e019ULL);
  const double u1 = 1.0 - static_cast<double>(h1 >> 11) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

} // namespace slabfill

#endif
