#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace sudoku {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

} // namespace detail

// Deterministic RNG. All distributions are implemented by hand on top of the
// mt19937_64 bit stream so draws are identical across compilers and platforms
// (std::normal_distribution and friends are implementation-defined).
//
// fork(tag) derives a child stream from (root seed, tag) only — it does not
// depend on how much the parent has already consumed, so independently named
// substreams never perturb each other.
class Rng {
public:
  explicit Rng(uint64_t seed) : root_(seed), eng_(seed) {}

  uint64_t u64() { return eng_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch only: exactly two engine draws per call
  double normal() {
    double u1 = 1.0 - uniform(); // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform integer in [0, n)
  int64_t index(int64_t n) {
    assert(n > 0);
    return static_cast<int64_t>(u64() % static_cast<uint64_t>(n));
  }

  Rng fork(std::string_view tag) const { return Rng(derive(root_, tag)); }

  uint64_t root_seed() const { return root_; }

  static uint64_t derive(uint64_t seed, std::string_view tag) {
    return detail::splitmix64(seed ^ detail::splitmix64(detail::fnv1a(tag)));
  }

private:
  uint64_t root_;
  std::mt19937_64 eng_;
};

// One master seed fanned out to the pipeline's named substreams.
struct RngSet {
  Rng data;
  Rng init;
  Rng training;
  Rng sampling;
};

inline RngSet seed_everything(uint64_t master_seed) {
  Rng root(master_seed);
  return RngSet{root.fork("data"), root.fork("init"), root.fork("training"),
                root.fork("sampling")};
}

} // namespace sudoku
