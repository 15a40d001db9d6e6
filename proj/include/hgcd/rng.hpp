#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hgcd {

// All randomness in the project flows from one root seed. Subsystems derive
// their own streams with derive_seed(root, stream, counter), so adding draws
// to one subsystem never perturbs another. Draw algorithms are hand-rolled
// (std::uniform_real_distribution et al. are implementation-defined) so the
// same seed gives the same bytes on every platform.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream identifiers for derive_seed. Keep stable: they are part of the
// reproducibility contract (checkpoints record only the root seed).
enum RngStream : uint64_t {
  kStreamParamInit = 1,
  kStreamShuffle = 2,
  kStreamAugment = 3,
  kStreamSynth = 4,
  kStreamKmeans = 5,
  kStreamSplit = 6,
  kStreamGradcheck = 7,
};

inline uint64_t derive_seed(uint64_t root, uint64_t stream, uint64_t counter = 0) {
  uint64_t s = splitmix64(root);
  s = splitmix64(s ^ (stream * 0xd6e8feb86659fd93ULL));
  s = splitmix64(s ^ (counter * 0xa0761d6478bd642fULL));
  return s;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53 random mantissa bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; two uniforms per draw, no caching, so the
  // draw count is a pure function of the call count.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates; std::shuffle's draw pattern is implementation-defined.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace hgcd
