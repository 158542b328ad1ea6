#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hetero {

/// SplitMix64 step; advances `state` and returns the next value.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a stream seed from a root seed and a stage tag. Each pipeline
/// stage draws from its own stream, so adding draws to one stage never
/// shifts the randomness of another.
inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t tag) {
  std::uint64_t s = root;
  std::uint64_t a = splitmix64(s);
  s = a ^ (tag * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  return splitmix64(s);
}

namespace seed_tag {
inline constexpr std::uint64_t gen = 1;
inline constexpr std::uint64_t folds = 2;
inline constexpr std::uint64_t batches_stage1 = 3;
inline constexpr std::uint64_t batches_stage2 = 4;
inline constexpr std::uint64_t model_init = 5;
inline constexpr std::uint64_t center_init = 6;
inline constexpr std::uint64_t tta = 7;
inline constexpr std::uint64_t fd_subsample = 8;
}  // namespace seed_tag

/// Deterministic draws on top of std::mt19937_64. The engine itself is fully
/// specified by the standard; the <random> distributions are not, so bounded
/// integers, shuffles and gaussians are implemented here to keep outputs
/// byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Unbiased integer in [0, bound). bound must be nonzero.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x < threshold);
    return x % bound;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates over [first, first+n).
  template <typename T>
  void shuffle(T* first, std::size_t n) {
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    shuffle(v.data(), v.size());
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hetero
