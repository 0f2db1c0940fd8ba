#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dpfb {

// Derives an independent stream seed from a base seed and a stream id
// (splitmix64 finalizer). Used everywhere a component needs its own
// reproducible substream: train runs, noise draws, bootstrap resamples.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seedable generator with explicitly specified output transforms.
//
// The engine is std::mt19937_64, whose sequence is fully pinned by the
// standard, and every transform below is defined in terms of that raw
// 64-bit stream. This is the reproducibility contract: given (seed, call
// sequence), outputs are identical across runs. Integer draws are
// platform-independent; floating draws additionally depend only on IEEE-754
// double arithmetic plus libm log/sqrt/cos.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution. Consumes one u64.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes exactly two u64 per draw
  // (the sine branch is discarded so the stream layout stays simple).
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform index in [0, n). Unbiased via rejection; consumes >= 1 u64.
  std::size_t uniform_index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dpfb
