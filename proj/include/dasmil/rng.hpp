#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace dasmil {

/// Seedable generator with platform-independent output.
///
/// Bits come from std::mt19937_64, whose sequence is fixed by the standard.
/// The engine is seeded through SplitMix64 so that nearby seeds give
/// unrelated streams. The standard library's distributions are
/// implementation-defined, so the distributions used here are spelled out:
///   uniform()  top 53 bits of one draw, scaled to [0, 1)
///   index(n)   rejection sampling on the top bits, unbiased
///   normal()   Box-Muller using two uniform() draws (no cached spare)
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for a (seed, path...) tuple, e.g. (seed, split, bag).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean, double stddev);
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dasmil
