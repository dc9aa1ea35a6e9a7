#include "cfpolicy/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace cfpolicy {

// splitmix64 finalizer
std::uint64_t Rng::mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(mix(origin_ ^ mix(stream * 0x2545f4914f6cdd1dULL + 1)));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n) - 1;
  std::uint64_t x = engine_();
  while (x > limit) x = engine_();
  return static_cast<std::size_t>(x % n);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order);
  return order;
}

}  // namespace cfpolicy
