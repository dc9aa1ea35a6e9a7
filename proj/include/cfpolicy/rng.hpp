#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cfpolicy {

// Seeded random stream. Draws are implemented here rather than through the
// <random> distributions because those are implementation-defined, and every
// artifact must be bit-reproducible for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : origin_(seed), engine_(mix(seed)) {}

  // Independent child stream, a pure function of (seed, stream).
  Rng derive(std::uint64_t stream) const;

  std::uint64_t next() { return engine_(); }
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                       // standard normal
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t below(std::size_t n);      // uniform on [0, n)

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

  std::vector<std::size_t> permutation(std::size_t n);

  static std::uint64_t mix(std::uint64_t x);

 private:
  std::uint64_t origin_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cfpolicy
