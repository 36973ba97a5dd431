#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cotparity {

/// Counter-based splittable RNG. A draw is a pure function of
/// (seed, stream, counter), so independent streams never interact and
/// sampling can be partitioned by counter blocks without changing results.
class SplitRng {
public:
  SplitRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(mix(seed + 0x9e3779b97f4a7c15ull) ^ mix(stream + 0x6a09e667f3bcc909ull))) {}

  std::uint64_t next_u64() {
    return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull);
  }

  /// Uniform double in [0,1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform draw from {-1,+1}.
  double next_sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  /// Uniform integer in [0, bound), bound > 0. Rejection sampling, unbiased.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("next_below: bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  /// k distinct values from [1..n], returned sorted ascending.
  std::vector<int> sample_subset(int n, int k) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_subset: need 0 <= k <= n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i + 1;
    for (int i = 0; i < k; ++i) {
      const auto j = i + static_cast<int>(next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
  }

private:
  // SplitMix64 finalizer; full avalanche on 64 bits.
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stream ids used across the library so that the same seed yields
/// independent draws for each purpose.
namespace streams {
constexpr std::uint64_t target = 1;
constexpr std::uint64_t inputs = 2;
constexpr std::uint64_t augmented = 3;
constexpr std::uint64_t fresh = 4;
constexpr std::uint64_t family = 5;
}  // namespace streams

}  // namespace cotparity
